//! Point down-sampling and sweep reconstruction.
//!
//! A spinning LiDAR delivers one sweep per revolution. Each sweep is cut into
//! three equal-duration segments, and every new segment is joined with the two
//! segments before it into a [`ReconstructedSweep`]. Output sweeps keep the
//! full revolution duration but arrive three times as often, so consecutive
//! outputs share two segments.
//!
//! Two front ends exist: [`PacketReconstructor`] for data already packaged as
//! whole sweeps, and [`StreamReconstructor`] for a raw time-ordered point
//! stream that is cut at a fixed segment period.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::Vec3;

/// Down-sampling voxel edge (m).
pub const DEFAULT_DOWNSAMPLE_VOXEL: f64 = 0.5;
/// Largest tolerated hole between consecutive segments (s).
pub const DEFAULT_GAP_TOLERANCE: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("degenerate sweep [{t_begin}, {t_end}] with {points} points")]
    DegenerateSweep { t_begin: f64, t_end: f64, points: usize },
    #[error("dropped data: segment gap from {from} to {to}")]
    DroppedData { from: f64, to: f64 },
    #[error("out-of-order point at {t} after {last}")]
    OutOfOrder { t: f64, last: f64 },
    #[error("voxel size must be positive, got {0}")]
    BadVoxelSize(f64),
}

/// One LiDAR return: position in the sensor frame at its capture instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPoint {
    pub position: Vec3,
    pub timestamp: f64,
}

impl TimedPoint {
    pub fn new(timestamp: f64, position: Vec3) -> Self {
        Self {
            position,
            timestamp,
        }
    }
}

/// Points of one full revolution, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSweep {
    points: Vec<TimedPoint>,
    t_begin: f64,
    t_end: f64,
}

impl RawSweep {
    pub fn new(points: Vec<TimedPoint>, t_begin: f64, t_end: f64) -> Result<Self, SweepError> {
        if !(t_end > t_begin) {
            return Err(SweepError::InvalidSweep(format!(
                "window [{t_begin}, {t_end}] is empty"
            )));
        }
        if points.is_empty() {
            return Err(SweepError::InvalidSweep("no points".into()));
        }
        for pair in points.windows(2) {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(SweepError::InvalidSweep("points not sorted by time".into()));
            }
        }
        if let Some(p) = points
            .iter()
            .find(|p| p.timestamp < t_begin || p.timestamp > t_end || !p.position.iter().all(|c| c.is_finite()))
        {
            return Err(SweepError::InvalidSweep(format!(
                "point at {} outside [{t_begin}, {t_end}] or non-finite",
                p.timestamp
            )));
        }
        Ok(Self {
            points,
            t_begin,
            t_end,
        })
    }

    pub fn points(&self) -> &[TimedPoint] {
        &self.points
    }

    pub fn t_begin(&self) -> f64 {
        self.t_begin
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_begin
    }
}

/// A third of a sweep's time window.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSegment {
    pub points: Vec<TimedPoint>,
    pub t_begin: f64,
    pub t_end: f64,
    /// Position inside the parent sweep, 1..=3.
    pub segment_index: u8,
    /// Running count of segments produced by one reconstructor.
    pub sequence: u64,
}

/// Three consecutive segments packaged as one full-duration sweep.
#[derive(Debug, Clone)]
pub struct ReconstructedSweep {
    pub segments: [Arc<SweepSegment>; 3],
    pub t_begin: f64,
    pub t_end: f64,
    pub index: u64,
}

impl ReconstructedSweep {
    /// Segment boundary times `[t_begin, t1, t2, t_end]`.
    pub fn boundaries(&self) -> [f64; 4] {
        [
            self.segments[0].t_begin,
            self.segments[1].t_begin,
            self.segments[2].t_begin,
            self.segments[2].t_end,
        ]
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.points.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points of all three segments tagged with their segment slot (0..3).
    pub fn points(&self) -> impl Iterator<Item = (usize, &TimedPoint)> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(k, s)| s.points.iter().map(move |p| (k, p)))
    }
}

const KEY_BITS: u32 = 21;
const KEY_MASK: i64 = (1 << KEY_BITS) - 1;

/// Packs `floor(p / voxel_size)` into 21 two's-complement bits per axis.
pub fn voxel_key(p: &Vec3, voxel_size: f64) -> u64 {
    let cell = |c: f64| ((c / voxel_size).floor() as i64 & KEY_MASK) as u64;
    (cell(p.x) << (2 * KEY_BITS)) | (cell(p.y) << KEY_BITS) | cell(p.z)
}

/// Keeps the earliest point of every occupied voxel; output sorted by time.
pub fn downsample(points: &[TimedPoint], voxel_size: f64) -> Result<Vec<TimedPoint>, SweepError> {
    if !(voxel_size > 0.0) {
        return Err(SweepError::BadVoxelSize(voxel_size));
    }
    let mut keep: HashMap<u64, usize> = HashMap::with_capacity(points.len() / 2);
    for (i, p) in points.iter().enumerate() {
        keep.entry(voxel_key(&p.position, voxel_size))
            .and_modify(|j| {
                if p.timestamp < points[*j].timestamp {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut survivors: Vec<usize> = keep.into_values().collect();
    survivors.sort_by(|&a, &b| points[a].timestamp.total_cmp(&points[b].timestamp).then(a.cmp(&b)));
    Ok(survivors.into_iter().map(|i| points[i]).collect())
}

/// Splits a sweep at its two inner third-points. Intervals are half-open except
/// the last, which also takes points stamped exactly at `t_end`.
pub fn segment_sweep(sweep: &RawSweep) -> Result<[SweepSegment; 3], SweepError> {
    if sweep.points.len() < 3 {
        return Err(SweepError::DegenerateSweep {
            t_begin: sweep.t_begin,
            t_end: sweep.t_end,
            points: sweep.points.len(),
        });
    }
    let step = sweep.duration() / 3.0;
    let cuts = [
        sweep.t_begin,
        sweep.t_begin + step,
        sweep.t_begin + 2.0 * step,
        sweep.t_end,
    ];
    let mut buckets: [Vec<TimedPoint>; 3] = Default::default();
    for p in &sweep.points {
        let k = if p.timestamp < cuts[1] {
            0
        } else if p.timestamp < cuts[2] {
            1
        } else {
            2
        };
        buckets[k].push(*p);
    }
    let [a, b, c] = buckets;
    let make = |points, k: usize| SweepSegment {
        points,
        t_begin: cuts[k],
        t_end: cuts[k + 1],
        segment_index: k as u8 + 1,
        sequence: 0,
    };
    Ok([make(a, 0), make(b, 1), make(c, 2)])
}

/// Joins three time-contiguous segments into one sweep.
pub fn reconstruct(
    segments: [Arc<SweepSegment>; 3],
    index: u64,
    gap_tolerance: f64,
) -> Result<ReconstructedSweep, SweepError> {
    for pair in segments.windows(2) {
        if (pair[1].t_begin - pair[0].t_end).abs() > gap_tolerance {
            return Err(SweepError::DroppedData {
                from: pair[0].t_end,
                to: pair[1].t_begin,
            });
        }
    }
    Ok(ReconstructedSweep {
        t_begin: segments[0].t_begin,
        t_end: segments[2].t_end,
        segments,
        index,
    })
}

/// Sliding three-segment queue shared by both front ends.
#[derive(Debug, Clone)]
struct SegmentQueue {
    recent: VecDeque<Arc<SweepSegment>>,
    next_sequence: u64,
    next_index: u64,
    gap_tolerance: f64,
}

impl SegmentQueue {
    fn new(gap_tolerance: f64) -> Self {
        Self {
            recent: VecDeque::with_capacity(3),
            next_sequence: 0,
            next_index: 0,
            gap_tolerance,
        }
    }

    fn push(&mut self, mut segment: SweepSegment) -> Result<Option<ReconstructedSweep>, SweepError> {
        segment.sequence = self.next_sequence;
        self.next_sequence += 1;
        if let Some(last) = self.recent.back() {
            if (segment.t_begin - last.t_end).abs() > self.gap_tolerance {
                let err = SweepError::DroppedData {
                    from: last.t_end,
                    to: segment.t_begin,
                };
                self.recent.clear();
                self.recent.push_back(Arc::new(segment));
                return Err(err);
            }
        }
        self.recent.push_back(Arc::new(segment));
        if self.recent.len() > 3 {
            self.recent.pop_front();
        }
        if self.recent.len() < 3 {
            return Ok(None);
        }
        let segs = [
            self.recent[0].clone(),
            self.recent[1].clone(),
            self.recent[2].clone(),
        ];
        let out = reconstruct(segs, self.next_index, self.gap_tolerance)?;
        self.next_index += 1;
        Ok(Some(out))
    }
}

/// Front end for datasets stored as whole sweeps: down-sample the sweep once,
/// cut it in three, and emit one output per new segment.
#[derive(Debug, Clone)]
pub struct PacketReconstructor {
    voxel_size: f64,
    queue: SegmentQueue,
}

impl PacketReconstructor {
    pub fn new(voxel_size: f64, gap_tolerance: f64) -> Self {
        Self {
            voxel_size,
            queue: SegmentQueue::new(gap_tolerance),
        }
    }

    /// Consumes one raw sweep. Yields one output at cold start and three afterwards.
    /// On a timing gap the carried segments are discarded and the error returned;
    /// the next sweep then restarts from this one's segments.
    pub fn push(&mut self, sweep: &RawSweep) -> Result<Vec<ReconstructedSweep>, SweepError> {
        let reduced = RawSweep::new(
            downsample(&sweep.points, self.voxel_size)?,
            sweep.t_begin,
            sweep.t_end,
        )?;
        let mut out = Vec::with_capacity(3);
        let mut first_err = None;
        for segment in segment_sweep(&reduced)? {
            match self.queue.push(segment) {
                Ok(Some(r)) => out.push(r),
                Ok(None) => {}
                Err(e) => first_err = first_err.or(Some(e)),
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

/// Front end for a live point stream: cut segments every `segment_period`
/// on a fixed grid, down-sample each segment on its own, and join it with the
/// two previous segments.
#[derive(Debug, Clone)]
pub struct StreamReconstructor {
    period: f64,
    voxel_size: f64,
    origin: Option<f64>,
    current: Option<(i64, Vec<TimedPoint>)>,
    last_t: f64,
    queue: SegmentQueue,
    pending: VecDeque<Result<ReconstructedSweep, SweepError>>,
}

impl StreamReconstructor {
    /// `origin` fixes the segment grid; `None` starts it at the first point.
    pub fn new(segment_period: f64, voxel_size: f64, gap_tolerance: f64, origin: Option<f64>) -> Self {
        assert!(segment_period > 0.0, "segment period must be positive");
        Self {
            period: segment_period,
            voxel_size,
            origin,
            current: None,
            last_t: f64::NEG_INFINITY,
            queue: SegmentQueue::new(gap_tolerance),
            pending: VecDeque::new(),
        }
    }

    fn slot(&self, t: f64) -> i64 {
        ((t - self.origin.unwrap_or(0.0)) / self.period).floor() as i64
    }

    fn bounds(&self, k: i64) -> (f64, f64) {
        let o = self.origin.unwrap_or(0.0);
        (o + k as f64 * self.period, o + (k + 1) as f64 * self.period)
    }

    fn close_current(&mut self) {
        let Some((k, points)) = self.current.take() else {
            return;
        };
        let (t_begin, t_end) = self.bounds(k);
        let points = match downsample(&points, self.voxel_size) {
            Ok(p) => p,
            Err(e) => {
                self.pending.push_back(Err(e));
                return;
            }
        };
        let segment = SweepSegment {
            points,
            t_begin,
            t_end,
            segment_index: (k.rem_euclid(3) + 1) as u8,
            sequence: 0,
        };
        match self.queue.push(segment) {
            Ok(Some(r)) => self.pending.push_back(Ok(r)),
            Ok(None) => {}
            Err(e) => self.pending.push_back(Err(e)),
        }
    }

    /// Feeds one point. Completed sweeps and errors are queued for [`Self::pop`].
    pub fn push(&mut self, point: TimedPoint) {
        let tol = self.queue.gap_tolerance;
        if point.timestamp < self.last_t - tol {
            self.pending.push_back(Err(SweepError::OutOfOrder {
                t: point.timestamp,
                last: self.last_t,
            }));
            return;
        }
        if self.origin.is_none() {
            self.origin = Some(point.timestamp);
        }
        let mut point = point;
        let k = self.slot(point.timestamp);
        match self.current.as_ref().map(|(c, _)| *c) {
            None => self.current = Some((k, Vec::new())),
            Some(c) if k < c => point.timestamp = self.bounds(c).0,
            Some(c) if k == c => {}
            Some(c) if k == c + 1 => {
                self.close_current();
                self.current = Some((k, Vec::new()));
            }
            Some(c) => {
                // Whole segments without a single return: the history is no longer
                // contiguous, so restart at the boundary of the new point.
                self.close_current();
                let (from, _) = self.bounds(c + 1);
                let (to, _) = self.bounds(k);
                self.queue.recent.clear();
                self.pending.push_back(Err(SweepError::DroppedData { from, to }));
                self.current = Some((k, Vec::new()));
            }
        }
        self.last_t = self.last_t.max(point.timestamp);
        if let Some((_, pts)) = self.current.as_mut() {
            pts.push(point);
        }
    }

    pub fn pop(&mut self) -> Option<Result<ReconstructedSweep, SweepError>> {
        self.pending.pop_front()
    }

    /// Closes the open segment if the stream reached its end boundary.
    pub fn finish(&mut self, stream_end: f64) {
        if let Some((k, _)) = &self.current {
            let (_, t_end) = self.bounds(*k);
            if stream_end >= t_end - self.queue.gap_tolerance {
                self.close_current();
            } else {
                self.current = None;
            }
        }
    }
}

/// Reconstructs a whole point stream. The open trailing segment is closed
/// when the last point lies within the gap tolerance of its end boundary.
pub fn reconstruct_stream<I>(
    points: I,
    segment_period: f64,
    voxel_size: f64,
    gap_tolerance: f64,
) -> impl Iterator<Item = Result<ReconstructedSweep, SweepError>>
where
    I: IntoIterator<Item = TimedPoint>,
{
    let mut rec = StreamReconstructor::new(segment_period, voxel_size, gap_tolerance, None);
    let mut points = points.into_iter();
    let mut last = None;
    let mut done = false;
    std::iter::from_fn(move || loop {
        if let Some(out) = rec.pop() {
            return Some(out);
        }
        if done {
            return None;
        }
        match points.next() {
            Some(p) => {
                last = Some(p.timestamp);
                rec.push(p);
            }
            None => {
                done = true;
                if let Some(t) = last {
                    rec.finish(t);
                }
            }
        }
    })
}
