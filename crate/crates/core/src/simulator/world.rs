//! Piecewise-planar worlds built from bounded rectangles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("plane {index} is invalid: {reason}")]
    InvalidPlane { index: usize, reason: String },
    #[error("unknown world preset `{0}`")]
    UnknownPreset(String),
}

/// A bounded rectangle lying in the plane `normal·x + d = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub normal: [f64; 3],
    pub d: f64,
    pub center: [f64; 3],
    /// In-plane unit axes.
    pub u: [f64; 3],
    pub v: [f64; 3],
    pub half_u: f64,
    pub half_v: f64,
}

impl Rectangle {
    /// Rectangle centred at `center` spanned by the orthogonal half-edge
    /// vectors `eu` and `ev`.
    pub fn from_edges(center: Vec3, eu: Vec3, ev: Vec3) -> Self {
        let u = eu.normalize();
        let v = ev.normalize();
        let normal = u.cross(&v).normalize();
        Self {
            normal: normal.into(),
            d: -normal.dot(&center),
            center: center.into(),
            u: u.into(),
            v: v.into(),
            half_u: eu.norm(),
            half_v: ev.norm(),
        }
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::from(self.normal)
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal().dot(p) + self.d
    }

    /// Ray parameter of the hit with this rectangle, if any.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let n = self.normal();
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = -(n.dot(origin) + self.d) / denom;
        if s <= 0.0 {
            return None;
        }
        let rel = origin + dir * s - Vec3::from(self.center);
        let inside = rel.dot(&Vec3::from(self.u)).abs() <= self.half_u && rel.dot(&Vec3::from(self.v)).abs() <= self.half_v;
        inside.then_some(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub planes: Vec<Rectangle>,
}

impl WorldModel {
    pub fn new(planes: Vec<Rectangle>) -> Result<Self, WorldError> {
        for (index, p) in planes.iter().enumerate() {
            let bad = |reason: &str| WorldError::InvalidPlane { index, reason: reason.to_string() };
            if ((p.normal().norm()) - 1.0).abs() > 1e-9 {
                return Err(bad("normal is not unit length"));
            }
            if !(p.half_u > 0.0 && p.half_v > 0.0) {
                return Err(bad("extent must be positive"));
            }
            if p.signed_distance(&Vec3::from(p.center)).abs() > 1e-9 {
                return Err(bad("center is off the plane"));
            }
        }
        Ok(Self { planes })
    }

    pub fn preset(name: &str) -> Result<Self, WorldError> {
        match name {
            "corridor" => Ok(Self::corridor()),
            "box_room" | "box" => Ok(Self::box_room(10.0, 8.0, 3.0)),
            "hall" => Ok(Self::hall()),
            other => Err(WorldError::UnknownPreset(other.to_string())),
        }
    }

    /// Axis-aligned box of the given full dimensions centred at the origin
    /// in x/y with the floor at z = −1.
    pub fn box_room(length: f64, width: f64, height: f64) -> Self {
        let mut planes = Vec::new();
        add_box(&mut planes, Vec3::new(0.0, 0.0, height / 2.0 - 1.0), Vec3::new(length, width, height));
        // Interior clutter so every direction is constrained.
        add_box(&mut planes, Vec3::new(length / 4.0, width / 4.0, -0.5), Vec3::new(1.0, 1.5, 1.0));
        add_box(&mut planes, Vec3::new(-length / 4.0, -width / 5.0, 0.0), Vec3::new(0.8, 0.8, 2.0));
        Self { planes }
    }

    /// Long corridor along x with pillars on both walls and closed ends.
    pub fn corridor() -> Self {
        let (x0, x1) = (-10.0, 50.0);
        let (y0, y1) = (-3.0, 3.0);
        let (z0, z1) = (-1.0, 2.0);
        let mut planes = Vec::new();
        add_box(
            &mut planes,
            Vec3::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, (z0 + z1) / 2.0),
            Vec3::new(x1 - x0, y1 - y0, z1 - z0),
        );
        let mut x = x0 + 2.0;
        let mut k = 0;
        while x < x1 - 1.0 {
            let (y, depth) = if k % 2 == 0 { (y1, 0.8 + 0.2 * (k % 3) as f64) } else { (y0, 1.0 - 0.2 * (k % 3) as f64) };
            let center_y = if y > 0.0 { y - depth / 2.0 } else { y + depth / 2.0 };
            add_box(&mut planes, Vec3::new(x, center_y, (z0 + z1) / 2.0), Vec3::new(1.0, depth, z1 - z0));
            x += 2.0;
            k += 1;
        }
        Self { planes }
    }

    /// Large room with free space for loops of up to 12 m radius around the
    /// origin and pillars inside and outside the loops.
    pub fn hall() -> Self {
        let mut planes = Vec::new();
        add_box(&mut planes, Vec3::new(0.0, 0.0, 1.0), Vec3::new(40.0, 40.0, 4.0));
        let pillars = [
            (15.0, 15.0, 2.0),
            (-15.0, 15.0, 3.0),
            (15.0, -15.0, 3.0),
            (-15.0, -15.0, 2.0),
            (16.0, 0.0, 1.5),
            (-16.0, 0.0, 2.5),
            (0.0, 16.0, 2.5),
            (0.0, -16.0, 1.5),
            (3.0, 6.0, 2.0),
            (-3.0, -6.0, 1.5),
            (-3.0, 6.0, 1.0),
            (3.0, -6.0, 2.5),
        ];
        for (x, y, h) in pillars {
            add_box(&mut planes, Vec3::new(x, y, -1.0 + h / 2.0), Vec3::new(1.0, 1.2, h));
        }
        Self { planes }
    }

    /// Nearest hit within `max_range`: `(range, plane index)`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<(f64, usize)> {
        self.planes
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir).map(|s| (s, i)))
            .filter(|(s, _)| *s <= max_range)
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Six faces of an axis-aligned box.
fn add_box(planes: &mut Vec<Rectangle>, center: Vec3, size: Vec3) {
    let h = size / 2.0;
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [-1.0, 1.0] {
            let mut c = center;
            c[axis] += sign * h[axis];
            let mut eu = Vec3::zeros();
            eu[a] = h[a];
            let mut ev = Vec3::zeros();
            ev[b] = h[b] * sign;
            planes.push(Rectangle::from_edges(c, eu, ev));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn presets_are_valid() {
        for name in ["corridor", "box_room", "hall"] {
            let w = WorldModel::preset(name).unwrap();
            WorldModel::new(w.planes.clone()).unwrap();
        }
        assert!(WorldModel::preset("moon").is_err());
    }

    #[test]
    fn invalid_plane_is_rejected() {
        let mut p = Rectangle::from_edges(Vec3::zeros(), Vec3::x(), Vec3::y());
        p.normal = [0.0, 0.0, 2.0];
        assert!(matches!(WorldModel::new(vec![p]), Err(WorldError::InvalidPlane { index: 0, .. })));
    }

    #[test]
    fn ray_hits_nearest_wall() {
        let w = WorldModel::box_room(10.0, 8.0, 3.0);
        let (s, i) = w.cast(&Vec3::new(0.0, 0.0, 0.0), &Vec3::new(0.0, 0.0, -1.0), 40.0).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        assert_relative_eq!(w.planes[i].normal().z.abs(), 1.0);
        let (s, _) = w.cast(&Vec3::zeros(), &Vec3::new(-1.0, 0.0, 0.0), 40.0).unwrap();
        assert!(s <= 5.0 + 1e-12);
        assert!(w.cast(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 1.0), 1.0).is_none());
    }

    #[test]
    fn box_normals_point_consistently() {
        let mut planes = Vec::new();
        add_box(&mut planes, Vec3::zeros(), Vec3::new(2.0, 2.0, 2.0));
        for p in &planes {
            // Outward-facing: the centre lies on the negative side.
            assert!(p.signed_distance(&Vec3::zeros()) < 0.0);
        }
    }
}
