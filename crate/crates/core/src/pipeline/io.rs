//! CSV and TUM readers and writers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{Pose, Vec3, quat_wxyz};
use crate::imu::ImuSample;
use crate::sweep::TimedPoint;

pub const POINTS_HEADER: [&str; 4] = ["t", "x", "y", "z"];
pub const IMU_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "gx", "gy", "gz"];
pub const SWEEPS_HEADER: [&str; 3] = ["sweep_id", "t_begin", "t_end"];
/// Significant digits of every number in a TUM file.
pub const TUM_DIGITS: usize = 9;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: u64, reason: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, reason: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Streaming reader of numeric CSV rows with a fixed header.
pub struct CsvRows<const N: usize> {
    path: PathBuf,
    records: csv::StringRecordsIntoIter<File>,
}

impl<const N: usize> CsvRows<N> {
    pub fn open(path: &Path, header: [&str; N]) -> Result<Self, IoError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let found = reader
            .headers()
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        if found != header {
            return Err(parse_err(
                path,
                1,
                format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
            ));
        }
        Ok(Self {
            path: path.to_path_buf(),
            records: reader.into_records(),
        })
    }
}

impl<const N: usize> Iterator for CsvRows<N> {
    type Item = Result<[f64; N], IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = self.records.next()?;
        Some(record.map_err(|e| parse_err(&self.path, e.position().map_or(0, |p| p.line()), e.to_string())).and_then(
            |r| {
                let line = r.position().map_or(0, |p| p.line());
                if r.len() != N {
                    return Err(parse_err(&self.path, line, format!("expected {N} fields, found {}", r.len())));
                }
                let mut out = [0.0; N];
                for (k, field) in r.iter().enumerate() {
                    out[k] = field
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| parse_err(&self.path, line, format!("invalid number `{field}`")))?;
                }
                Ok(out)
            },
        ))
    }
}

pub fn point_rows(path: &Path) -> Result<impl Iterator<Item = Result<TimedPoint, IoError>>, IoError> {
    Ok(CsvRows::open(path, POINTS_HEADER)?.map(|r| r.map(|[t, x, y, z]| TimedPoint::new(t, Vec3::new(x, y, z)))))
}

pub fn read_points(path: &Path) -> Result<Vec<TimedPoint>, IoError> {
    point_rows(path)?.collect()
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, IoError> {
    CsvRows::open(path, IMU_HEADER)?
        .map(|r| r.map(|[t, ax, ay, az, gx, gy, gz]| ImuSample::new(t, Vec3::new(ax, ay, az), Vec3::new(gx, gy, gz))))
        .collect()
}

/// Sweep boundary rows `(id, t_begin, t_end)`.
pub fn read_sweeps(path: &Path) -> Result<Vec<(u64, f64, f64)>, IoError> {
    CsvRows::open(path, SWEEPS_HEADER)?
        .enumerate()
        .map(|(k, r)| {
            let [id, tb, te] = r?;
            if id < 0.0 || id.fract() != 0.0 {
                return Err(parse_err(path, k as u64 + 2, format!("invalid sweep id {id}")));
            }
            Ok((id as u64, tb, te))
        })
        .collect()
}

pub fn write_points<W: Write>(w: &mut W, points: &[TimedPoint]) -> std::io::Result<()> {
    for p in points {
        writeln!(w, "{},{},{},{}", p.timestamp, p.position.x, p.position.y, p.position.z)?;
    }
    Ok(())
}

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<(), IoError> {
    let mut w = create(path)?;
    let mut body = format!("{}\n", IMU_HEADER.join(","));
    for s in samples {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.timestamp, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z
        ));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Fixed-point rendering of `x` with `digits` significant digits.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", digits.saturating_sub(1), if x.is_finite() { 0.0 } else { x });
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit.
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded != 0.0 && rounded.abs().log10().floor() as i64 > magnitude && decimals > 0 {
        format!("{x:.*}", decimals - 1)
    } else {
        s
    }
}

pub fn tum_line(t: f64, pose: &Pose) -> String {
    let q = pose.rotation.quaternion();
    let p = pose.translation;
    [t, p.x, p.y, p.z, q.i, q.j, q.k, q.w]
        .iter()
        .map(|v| format_significant(*v, TUM_DIGITS))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_tum(path: &Path, poses: &[(f64, Pose)]) -> Result<(), IoError> {
    let mut w = create(path)?;
    let body: String = poses.iter().map(|(t, p)| tum_line(*t, p) + "\n").collect();
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Reads `t tx ty tz qx qy qz qw` lines; blank lines and `#` comments are skipped.
pub fn read_tum(path: &Path) -> Result<Vec<(f64, Pose)>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line_no = k as u64 + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let values = text
            .split_whitespace()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| parse_err(path, line_no, "invalid number"))?;
        let [t, x, y, z, qx, qy, qz, qw] = values[..] else {
            return Err(parse_err(path, line_no, format!("expected 8 fields, found {}", values.len())));
        };
        if qx * qx + qy * qy + qz * qz + qw * qw < 1e-12 {
            return Err(parse_err(path, line_no, "zero quaternion"));
        }
        out.push((t, Pose::new(quat_wxyz(qw, qx, qy, qz), Vec3::new(x, y, z))));
    }
    Ok(out)
}
