//! Voxel-hashed point map with per-cell capacity and plane fitting.

use std::collections::HashMap;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::SymmetricEigen;
use thiserror::Error;

use crate::geometry::{Mat3, Vec3};

/// Fixed-key hasher so iteration order depends only on the insertion history.
type StableHasher = rustc_hash::FxBuildHasher;

const BINARY_MAGIC: &[u8; 8] = b"LIOVXMAP";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MapError + '_ {
    move |source| MapError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    pub voxel_size: f64,
    pub max_points: usize,
    /// Minimum time between two insertion events (s).
    pub min_gap: f64,
    /// Minimum distance between points sharing a cell; 0 disables the check.
    pub min_point_spacing: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            voxel_size: 1.0,
            max_points: 20,
            min_gap: 0.1,
            min_point_spacing: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

impl VoxelIndex {
    pub fn of(p: &Vec3, voxel_size: f64) -> Self {
        Self {
            x: (p.x / voxel_size).floor() as i64,
            y: (p.y / voxel_size).floor() as i64,
            z: (p.z / voxel_size).floor() as i64,
        }
    }

    pub fn center(&self, voxel_size: f64) -> Vec3 {
        Vec3::new(self.x as f64 + 0.5, self.y as f64 + 0.5, self.z as f64 + 0.5) * voxel_size
    }

    fn offset(&self, dx: i64, dy: i64, dz: i64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            z: self.z + dz,
        }
    }
}

/// The 27 cells around a voxel, nearest first.
const NEIGHBOR_OFFSETS: [(i64, i64, i64); 27] = {
    let mut out = [(0, 0, 0); 27];
    let mut n = 0;
    let mut level = 0;
    while level <= 3 {
        let mut i = 0;
        while i < 27 {
            let (dx, dy, dz) = (i / 9 - 1, (i / 3) % 3 - 1, i % 3 - 1);
            if dx * dx + dy * dy + dz * dz == level {
                out[n] = (dx, dy, dz);
                n += 1;
            }
            i += 1;
        }
        level += 1;
    }
    out
};

/// Squared distance from `p` to the closest point of a cell.
fn cell_distance2(p: &Vec3, index: &VoxelIndex, voxel: f64) -> f64 {
    let lo = Vec3::new(index.x as f64, index.y as f64, index.z as f64) * voxel;
    (0..3)
        .map(|i| {
            let d = (lo[i] - p[i]).max(0.0).max(p[i] - (lo[i] + voxel));
            d * d
        })
        .sum()
}

/// A neighbor returned by [`VoxelMap::nearest_neighbors`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub point: Vec3,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    cells: HashMap<VoxelIndex, Vec<Vec3>, StableHasher>,
    config: MapConfig,
    last_update_time: Option<f64>,
    insertion_events: usize,
}

impl VoxelMap {
    pub fn new(config: MapConfig) -> Self {
        assert!(config.voxel_size > 0.0, "voxel size must be positive");
        Self {
            cells: HashMap::default(),
            config,
            last_update_time: None,
            insertion_events: 0,
        }
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn last_update_time(&self) -> Option<f64> {
        self.last_update_time
    }

    /// Number of insertion events that passed the frequency gate.
    pub fn insertion_events(&self) -> usize {
        self.insertion_events
    }

    pub fn len(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, index: &VoxelIndex) -> Option<&[Vec3]> {
        self.cells.get(index).map(Vec::as_slice)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelIndex, &[Vec3])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// All stored points ordered by cell index, then insertion order.
    pub fn sorted_points(&self) -> Vec<Vec3> {
        let mut keys: Vec<_> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        keys.iter().flat_map(|k| self.cells[k].iter().copied()).collect()
    }

    /// Adds points without the frequency gate. Returns how many were stored.
    pub fn insert_points(&mut self, points: &[Vec3]) -> usize {
        let MapConfig {
            voxel_size,
            max_points,
            min_point_spacing,
            ..
        } = self.config;
        let spacing2 = min_point_spacing * min_point_spacing;
        let mut inserted = 0;
        for p in points {
            if !p.iter().all(|c| c.is_finite()) {
                continue;
            }
            let cell = self.cells.entry(VoxelIndex::of(p, voxel_size)).or_default();
            if cell.len() >= max_points {
                continue;
            }
            if spacing2 > 0.0 && cell.iter().any(|q| (q - p).norm_squared() < spacing2) {
                continue;
            }
            cell.push(*p);
            inserted += 1;
        }
        inserted
    }

    /// Frequency-gated insertion: a no-op returning 0 when less than
    /// `min_gap` has passed since the previous accepted insertion.
    pub fn insert_sweep(&mut self, points: &[Vec3], now: f64) -> usize {
        if let Some(last) = self.last_update_time {
            // Slack absorbs rounding in accumulated sweep timestamps.
            if now - last + 1e-9 < self.config.min_gap {
                return 0;
            }
        }
        self.last_update_time = Some(now);
        self.insertion_events += 1;
        self.insert_points(points)
    }

    /// Up to `k` nearest stored points within the 3×3×3 block of cells around
    /// `query`, sorted by ascending distance.
    pub fn nearest_neighbors(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let voxel = self.config.voxel_size;
        let center = VoxelIndex::of(query, voxel);
        let before = |a: &(f64, Vec3), b: &(f64, Vec3)| {
            a.0 < b.0
                || (a.0 == b.0
                    && a.1.x.total_cmp(&b.1.x).then(a.1.y.total_cmp(&b.1.y)).then(a.1.z.total_cmp(&b.1.z)).is_lt())
        };
        // The `k` best candidates so far, unordered, with the position of the worst.
        let mut best: Vec<(f64, Vec3)> = Vec::with_capacity(k);
        let mut worst = 0;
        for (dx, dy, dz) in NEIGHBOR_OFFSETS {
            let index = center.offset(dx, dy, dz);
            let Some(cell) = self.cells.get(&index) else { continue };
            if best.len() == k && cell_distance2(query, &index, voxel) > best[worst].0 {
                continue;
            }
            for p in cell {
                let cand = ((p - query).norm_squared(), *p);
                if best.len() < k {
                    best.push(cand);
                    if best.len() == k {
                        worst = (1..k).fold(0, |w, i| if before(&best[w], &best[i]) { i } else { w });
                    }
                } else if before(&cand, &best[worst]) {
                    best[worst] = cand;
                    worst = (1..k).fold(0, |w, i| if before(&best[w], &best[i]) { i } else { w });
                }
            }
        }
        best.sort_unstable_by(|a, b| if before(a, b) { std::cmp::Ordering::Less } else if before(b, a) { std::cmp::Ordering::Greater } else { std::cmp::Ordering::Equal });
        best.into_iter()
            .map(|(d2, point)| Neighbor {
                point,
                distance: d2.sqrt(),
            })
            .collect()
    }

    /// Removes every cell whose center lies farther than `radius` from `center`.
    pub fn prune_far(&mut self, center: &Vec3, radius: f64) -> usize {
        let voxel = self.config.voxel_size;
        let before = self.cells.len();
        self.cells.retain(|idx, _| (idx.center(voxel) - center).norm() <= radius);
        before - self.cells.len()
    }

    /// Writes `x,y,z` rows in [`Self::sorted_points`] order.
    pub fn export_csv(&self, path: &Path) -> Result<(), MapError> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        let mut body = String::from("x,y,z\n");
        for p in self.sorted_points() {
            body.push_str(&format!("{},{},{}\n", p.x, p.y, p.z));
        }
        w.write_all(body.as_bytes()).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))
    }

    /// Little-endian binary dump: magic, version, voxel size, capacity,
    /// point count, then `x y z` float64 triplets.
    pub fn write_binary(&self, path: &Path) -> Result<(), MapError> {
        let points = self.sorted_points();
        let mut buf = Vec::with_capacity(32 + points.len() * 24);
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.config.voxel_size.to_le_bytes());
        buf.extend_from_slice(&(self.config.max_points as u32).to_le_bytes());
        buf.extend_from_slice(&(points.len() as u64).to_le_bytes());
        for p in &points {
            for c in p.iter() {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        std::fs::write(path, buf).map_err(io_err(path))
    }

    /// Restores a map written by [`Self::write_binary`].
    pub fn read_binary(path: &Path, min_gap: f64) -> Result<Self, MapError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        let bad = |reason: &str| MapError::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 32 || &bytes[..8] != BINARY_MAGIC {
            return Err(bad("not a voxel map dump"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(8) != BINARY_VERSION {
            return Err(bad("unsupported version"));
        }
        let voxel_size = f64_at(12);
        let max_points = u32_at(20) as usize;
        let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        if !(voxel_size > 0.0) || bytes.len() != 32 + count * 24 {
            return Err(bad("corrupt header or truncated body"));
        }
        let mut map = VoxelMap::new(MapConfig {
            voxel_size,
            max_points,
            min_gap,
            min_point_spacing: 0.0,
        });
        let points: Vec<Vec3> = (0..count)
            .map(|i| {
                let o = 32 + i * 24;
                Vec3::new(f64_at(o), f64_at(o + 8), f64_at(o + 16))
            })
            .collect();
        map.insert_points(&points);
        Ok(map)
    }
}

/// Plane `normal · x + d = 0` fitted to map neighbors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub normal: Vec3,
    pub d: f64,
    pub inlier_count: usize,
    /// `1 − λmin/λmid` of the scatter matrix, in [0, 1].
    pub planarity: f64,
}

impl PlaneFit {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.d
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum PlaneRejection {
    #[error("{0} points are too few for a plane")]
    TooFewPoints(usize),
    #[error("points are collinear or coincident")]
    Degenerate,
    #[error("planarity {0} below threshold")]
    NotPlanar(f64),
}

pub const MIN_PLANE_POINTS: usize = 5;
/// Smallest `λmid/λmax`; flatter neighborhoods are lines whose plane is unconstrained.
pub const MIN_SPREAD_RATIO: f64 = 0.01;

/// Least-squares plane through `points` from the scatter-matrix eigenvectors.
pub fn fit_plane(points: &[Vec3], min_planarity: f64) -> Result<PlaneFit, PlaneRejection> {
    if points.len() < MIN_PLANE_POINTS {
        return Err(PlaneRejection::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec3>() / n;
    let scatter = points.iter().fold(Mat3::zeros(), |acc, p| {
        let c = p - centroid;
        acc + c * c.transpose()
    }) / n;
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l_min, l_mid, l_max) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    );
    if l_max <= 0.0 || l_mid < MIN_SPREAD_RATIO * l_max {
        return Err(PlaneRejection::Degenerate);
    }
    let planarity = (1.0 - l_min / l_mid).clamp(0.0, 1.0);
    if planarity < min_planarity {
        return Err(PlaneRejection::NotPlanar(planarity));
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    // Fixed sign: the largest-magnitude component is positive.
    let k = normal.iamax();
    if normal[k] < 0.0 {
        normal = -normal;
    }
    Ok(PlaneFit {
        normal,
        d: -normal.dot(&centroid),
        inlier_count: points.len(),
        planarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::rng::CounterRng;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    fn map() -> VoxelMap {
        VoxelMap::new(MapConfig::default())
    }

    fn random_points(rng: &mut CounterRng, n: usize, half: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.uniform_in(-half, half), rng.uniform_in(-half, half), rng.uniform_in(-half, half)))
            .collect()
    }

    fn key(p: &Vec3) -> [u64; 3] {
        [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
    }

    #[test]
    fn cell_capacity_is_enforced() {
        let mut m = map();
        let pts: Vec<_> = (0..25).map(|i| Vec3::new(0.5, 0.5, i as f64 * 0.03)).collect();
        assert_eq!(m.insert_points(&pts), 20);
        assert_eq!(m.len(), 20);
    }

    #[test]
    fn stored_points_lie_in_their_cells() {
        let mut rng = CounterRng::new(1, 0);
        let mut m = map();
        m.insert_points(&random_points(&mut rng, 5000, 10.0));
        for (idx, pts) in m.cells() {
            assert!(pts.len() <= 20);
            for p in pts {
                assert_eq!(VoxelIndex::of(p, 1.0), *idx);
            }
        }
    }

    #[test]
    fn frequency_gate_at_30hz() {
        let mut m = map();
        let mut events = Vec::new();
        for i in 0..30 {
            let now = i as f64 / 30.0;
            let p = [Vec3::new(i as f64 * 2.0, 0.0, 0.0)];
            if m.insert_sweep(&p, now) > 0 {
                events.push(i);
            }
        }
        assert_eq!(events, (0..30).step_by(3).collect::<Vec<_>>());
        assert_eq!(m.insertion_events(), 10);
    }

    #[test]
    fn full_cells_reject_repeated_sweep() {
        let mut rng = CounterRng::new(2, 0);
        let mut m = map();
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| Vec3::new(rng.uniform_in(0.0, 2.0), rng.uniform_in(0.0, 2.0), rng.uniform_in(0.0, 1.0)))
            .collect();
        m.insert_sweep(&pts, 0.0);
        let before: BTreeSet<_> = m.sorted_points().iter().map(key).collect();
        assert_eq!(m.insert_sweep(&pts, 1.0), 0);
        let after: BTreeSet<_> = m.sorted_points().iter().map(key).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn min_point_spacing_rejects_close_points() {
        let mut m = VoxelMap::new(MapConfig {
            min_point_spacing: 0.1,
            ..MapConfig::default()
        });
        let n = m.insert_points(&[Vec3::new(0.5, 0.5, 0.5), Vec3::new(0.55, 0.5, 0.5), Vec3::new(0.7, 0.5, 0.5)]);
        assert_eq!(n, 2);
    }

    #[test]
    fn nearest_single_point() {
        let mut m = map();
        let p = Vec3::new(3.2, -1.1, 0.4);
        m.insert_points(&[p]);
        let nn = m.nearest_neighbors(&p, 20);
        assert_eq!(nn.len(), 1);
        assert_eq!(nn[0].point, p);
        assert_eq!(nn[0].distance, 0.0);
        assert!(m.nearest_neighbors(&Vec3::new(50.0, 0.0, 0.0), 5).is_empty());
    }

    #[test]
    fn nearest_matches_brute_force_in_neighborhood() {
        let mut rng = CounterRng::new(3, 0);
        let mut m = map();
        let mut grid = Vec::new();
        for x in 0..12 {
            for y in 0..12 {
                for z in 0..6 {
                    grid.push(Vec3::new(x as f64 * 0.4, y as f64 * 0.4, z as f64 * 0.4));
                }
            }
        }
        m.insert_points(&grid);
        let stored = m.sorted_points();
        for _ in 0..200 {
            let q = Vec3::new(rng.uniform_in(0.0, 4.4), rng.uniform_in(0.0, 4.4), rng.uniform_in(0.0, 2.0));
            let c = VoxelIndex::of(&q, 1.0);
            let mut brute: Vec<f64> = stored
                .iter()
                .filter(|p| {
                    let i = VoxelIndex::of(p, 1.0);
                    (i.x - c.x).abs() <= 1 && (i.y - c.y).abs() <= 1 && (i.z - c.z).abs() <= 1
                })
                .map(|p| (p - q).norm())
                .collect();
            brute.sort_by(f64::total_cmp);
            brute.truncate(20);
            let got: Vec<f64> = m.nearest_neighbors(&q, 20).iter().map(|n| n.distance).collect();
            assert_eq!(got.len(), brute.len());
            for (a, b) in got.iter().zip(&brute) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn nearest_crosses_cell_faces_and_corners() {
        let mut m = map();
        let across_face = Vec3::new(1.001, 0.5, 0.5);
        let across_corner = Vec3::new(-0.001, -0.001, -0.001);
        m.insert_points(&[across_face, across_corner]);
        let nn = m.nearest_neighbors(&Vec3::new(0.999, 0.5, 0.5), 1);
        assert_eq!(nn[0].point, across_face);
        let nn = m.nearest_neighbors(&Vec3::new(0.001, 0.001, 0.001), 1);
        assert_eq!(nn[0].point, across_corner);
    }

    #[test]
    fn plane_through_exact_points() {
        let pts: Vec<_> = (0..20).map(|i| Vec3::new((i % 5) as f64, (i / 5) as f64 * 0.7, 3.0)).collect();
        let fit = fit_plane(&pts, 0.5).unwrap();
        assert_relative_eq!(fit.normal, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-9);
        assert_relative_eq!(fit.d, -3.0, epsilon = 1e-9);
        for p in &pts {
            assert!(fit.signed_distance(p).abs() < 1e-9);
        }
        assert_relative_eq!(fit.planarity, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn noisy_plane_normal() {
        let mut rng = CounterRng::new(4, 0);
        for _ in 0..200 {
            let pts: Vec<_> = (0..20)
                .map(|_| Vec3::new(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), 3.0 + 0.01 * rng.gaussian()))
                .collect();
            let fit = fit_plane(&pts, 0.5).unwrap();
            assert!(fit.normal.cross(&Vec3::z()).norm() < 0.05);
            let centroid = pts.iter().sum::<Vec3>() / 20.0;
            assert!(fit.signed_distance(&centroid).abs() < 1e-9);
            assert_relative_eq!(fit.normal.norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let line: Vec<_> = (0..10).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert_eq!(fit_plane(&line, 0.5), Err(PlaneRejection::Degenerate));
        assert_eq!(fit_plane(&line[..3], 0.5), Err(PlaneRejection::TooFewPoints(3)));
        let mut rng = CounterRng::new(5, 0);
        let blob = random_points(&mut rng, 200, 1.0);
        assert!(matches!(fit_plane(&blob, 0.5), Err(PlaneRejection::NotPlanar(_))));
    }

    #[test]
    fn prune_examples() {
        let mut m = map();
        m.insert_points(&[Vec3::new(1.0, 1.0, 1.0), Vec3::new(-2.0, 0.5, 0.0)]);
        assert_eq!(m.prune_far(&Vec3::zeros(), 10.0), 0);
        m.insert_points(&[Vec3::new(20.2, 0.0, 0.0)]);
        assert_eq!(m.prune_far(&Vec3::zeros(), 10.0), 1);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn prune_matches_brute_force() {
        let mut rng = CounterRng::new(6, 0);
        let mut m = map();
        m.insert_points(&random_points(&mut rng, 3000, 30.0));
        let center = Vec3::new(3.0, -2.0, 1.0);
        let expected: BTreeSet<VoxelIndex> = m
            .cells()
            .filter(|(i, _)| (i.center(1.0) - center).norm() <= 17.0)
            .map(|(i, _)| *i)
            .collect();
        m.prune_far(&center, 17.0);
        let got: BTreeSet<VoxelIndex> = m.cells().map(|(i, _)| *i).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let mut rng = CounterRng::new(7, 0);
        let mut m = map();
        m.insert_points(&random_points(&mut rng, 500, 5.0));
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("map.bin");
        m.write_binary(&bin).unwrap();
        let back = VoxelMap::read_binary(&bin, 0.1).unwrap();
        assert_eq!(back.sorted_points(), m.sorted_points());
        let csv = dir.path().join("map.csv");
        m.export_csv(&csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), m.len() + 1);
        std::fs::write(&bin, b"garbage").unwrap();
        assert!(matches!(VoxelMap::read_binary(&bin, 0.1), Err(MapError::Format { .. })));
    }

    proptest::proptest! {
        #[test]
        fn capacity_holds_under_any_sequence(seed in 0u64..300, cap in 1usize..30) {
            let mut rng = CounterRng::new(seed, 1);
            let mut m = VoxelMap::new(MapConfig { max_points: cap, ..MapConfig::default() });
            for i in 0..5 {
                let pts = random_points(&mut rng, 300, 2.0);
                m.insert_sweep(&pts, i as f64 * 0.05);
            }
            for (_, pts) in m.cells() {
                proptest::prop_assert!(pts.len() <= cap);
            }
        }
    }
}
