//! Absolute trajectory error after rigid alignment.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{Mat3, Pose, Vec3};

/// Largest timestamp difference of a matched pair (s).
pub const DEFAULT_MATCH_WINDOW: f64 = 0.01;
pub const MIN_MATCHES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AteError {
    #[error("only {found} timestamp matches within {window} s, need {required}")]
    TooFewMatches { found: usize, required: usize, window: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    /// Root mean square translational error (m).
    pub ate: f64,
    /// `(estimate timestamp, translational error)` per matched pose.
    pub errors: Vec<(f64, f64)>,
    /// Rigid transform applied to the estimate.
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl AteResult {
    pub fn matches(&self) -> usize {
        self.errors.len()
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// Index of the ground-truth entry nearest to `t`.
fn nearest(gt: &[(f64, Pose)], t: f64) -> Option<usize> {
    let i = gt.partition_point(|(s, _)| *s < t);
    [i.checked_sub(1), (i < gt.len()).then_some(i)]
        .into_iter()
        .flatten()
        .min_by(|a, b| (gt[*a].0 - t).abs().total_cmp(&(gt[*b].0 - t).abs()))
}

/// Pairs each estimate with the nearest ground truth within `window`.
pub fn match_poses(est: &[(f64, Pose)], gt: &[(f64, Pose)], window: f64) -> Vec<(f64, Vec3, Vec3)> {
    let mut sorted = gt.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    est.iter()
        .filter_map(|(t, p)| {
            let j = nearest(&sorted, *t)?;
            ((sorted[j].0 - t).abs() <= window).then(|| (*t, p.translation, sorted[j].1.translation))
        })
        .collect()
}

/// Least-squares rotation and translation with `target ≈ R·source + t`.
pub fn align_rigid(source: &[Vec3], target: &[Vec3]) -> (Mat3, Vec3) {
    let n = source.len() as f64;
    let ms = source.iter().sum::<Vec3>() / n;
    let mt = target.iter().sum::<Vec3>() / n;
    let cov: Matrix3<f64> = source
        .iter()
        .zip(target)
        .map(|(s, t)| (t - mt) * (s - ms).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Mat3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    (r, mt - r * ms)
}

pub fn eval_ate(est: &[(f64, Pose)], gt: &[(f64, Pose)], window: f64) -> Result<AteResult, AteError> {
    let pairs = match_poses(est, gt, window);
    if pairs.len() < MIN_MATCHES {
        return Err(AteError::TooFewMatches {
            found: pairs.len(),
            required: MIN_MATCHES,
            window,
        });
    }
    let source: Vec<Vec3> = pairs.iter().map(|p| p.1).collect();
    let target: Vec<Vec3> = pairs.iter().map(|p| p.2).collect();
    let (rotation, translation) = align_rigid(&source, &target);
    let errors: Vec<(f64, f64)> = pairs
        .iter()
        .map(|(t, s, g)| (*t, (rotation * s + translation - g).norm()))
        .collect();
    let ate = (errors.iter().map(|e| e.1 * e.1).sum::<f64>() / errors.len() as f64).sqrt();
    Ok(AteResult {
        ate,
        errors,
        rotation,
        translation,
    })
}
