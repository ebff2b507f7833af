//! Trajectory error metrics.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{Pose, Rotation};

/// Maximum timestamp gap when pairing estimate and truth samples (s).
pub const ASSOCIATION_TOLERANCE: f64 = 0.05;
/// Ground-truth arc length of one relative-error segment (m).
pub const RTE_SEGMENT_LENGTH: f64 = 1.0;

/// Timestamped poses with strictly increasing time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    stamps: Vec<f64>,
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(stamps: Vec<f64>, poses: Vec<Pose>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::ShapeMismatch("trajectory needs one pose per timestamp".into()));
        }
        if stamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::ShapeMismatch("trajectory timestamps must strictly increase".into()));
        }
        Ok(Self { stamps, poses })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, Pose)>) -> Result<Self> {
        let (stamps, poses) = pairs.into_iter().unzip();
        Self::new(stamps, poses)
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    /// Applies `g · T` to every pose.
    pub fn transformed(&self, g: &Pose) -> Self {
        Self {
            stamps: self.stamps.clone(),
            poses: self.poses.iter().map(|p| g.compose(p)).collect(),
        }
    }

    /// Index of the sample closest in time to `t` if within the tolerance.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        let i = self.stamps.partition_point(|&s| s < t);
        let candidates = [i.checked_sub(1), (i < self.len()).then_some(i)];
        candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (self.stamps[a] - t).abs().total_cmp(&(self.stamps[b] - t).abs()))
            .filter(|&j| (self.stamps[j] - t).abs() <= ASSOCIATION_TOLERANCE)
    }
}

/// Pairs every estimate sample with its nearest truth sample.
pub fn associate(estimate: &Trajectory, truth: &Trajectory) -> Vec<(usize, usize)> {
    (0..estimate.len())
        .filter_map(|i| truth.nearest(estimate.stamps[i]).map(|j| (i, j)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub std: f64,
    pub rmse: f64,
    pub max: f64,
    pub count: usize,
}

impl ErrorStats {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            rmse: (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
            max: values.iter().copied().fold(0.0, f64::max),
            count: values.len(),
        }
    }
}

/// Rigid transform `g` minimizing `Σ ‖g·from_k − to_k‖²` (no scale).
pub fn umeyama_alignment(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Pose {
    let n = from.len() as f64;
    let mu_f = from.iter().sum::<Vector3<f64>>() / n;
    let mu_t = to.iter().sum::<Vector3<f64>>() / n;
    let cov: Matrix3<f64> = from
        .iter()
        .zip(to)
        .map(|(f, t)| (t - mu_t) * (f - mu_f).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    Pose::new(Rotation::from_matrix_unchecked(r), mu_t - r * mu_f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub stats: ErrorStats,
    pub alignment: Pose,
    /// Per-association translational error after alignment, `(estimate index, error)`.
    pub errors: Vec<(usize, f64)>,
}

pub fn compute_ate(estimate: &Trajectory, truth: &Trajectory) -> Result<AteResult> {
    let pairs = associate(estimate, truth);
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let from: Vec<_> = pairs.iter().map(|&(i, _)| estimate.poses[i].translation).collect();
    let to: Vec<_> = pairs.iter().map(|&(_, j)| truth.poses[j].translation).collect();
    let alignment = if pairs.len() >= 3 {
        umeyama_alignment(&from, &to)
    } else {
        Pose::identity()
    };
    let errors: Vec<(usize, f64)> = pairs
        .iter()
        .zip(from.iter().zip(&to))
        .map(|(&(i, _), (f, t))| (i, (alignment.transform_point(f) - t).norm()))
        .collect();
    let values: Vec<f64> = errors.iter().map(|e| e.1).collect();
    Ok(AteResult {
        stats: ErrorStats::from_samples(&values),
        alignment,
        errors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RteResult {
    /// Translational error per segment (m).
    pub translation: ErrorStats,
    /// Rotational error per segment (deg).
    pub rotation: ErrorStats,
}

/// Relative error of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RteSegment {
    /// Truth index of the segment start.
    pub truth_start: usize,
    pub translation: f64,
    /// Degrees.
    pub rotation: f64,
}

/// One segment starts at each associated sample; it ends at the first later
/// sample whose truth arc length from the start reaches `segment_length`.
pub fn rte_segments(estimate: &Trajectory, truth: &Trajectory, segment_length: f64) -> Result<Vec<RteSegment>> {
    let pairs = associate(estimate, truth);
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let gt: Vec<&Pose> = pairs.iter().map(|&(_, j)| &truth.poses[j]).collect();
    let est: Vec<&Pose> = pairs.iter().map(|&(i, _)| &estimate.poses[i]).collect();
    let mut arc = vec![0.0; gt.len()];
    for k in 1..gt.len() {
        arc[k] = arc[k - 1] + (gt[k].translation - gt[k - 1].translation).norm();
    }
    let mut out = Vec::new();
    let mut end = 0;
    for start in 0..gt.len() {
        end = end.max(start);
        while end < gt.len() && arc[end] - arc[start] < segment_length {
            end += 1;
        }
        if end == gt.len() {
            break;
        }
        let rel_gt = gt[start].between(gt[end]);
        let rel_est = est[start].between(est[end]);
        let err = rel_gt.between(&rel_est);
        out.push(RteSegment {
            truth_start: pairs[start].1,
            translation: err.translation.norm(),
            rotation: err.rotation.angle().to_degrees(),
        });
    }
    if out.is_empty() {
        return Err(Error::TooShort(arc.last().copied().unwrap_or(0.0)));
    }
    Ok(out)
}

/// Relative error over every ground-truth segment of `segment_length` arc length.
pub fn compute_rte(estimate: &Trajectory, truth: &Trajectory, segment_length: f64) -> Result<RteResult> {
    let segments = rte_segments(estimate, truth, segment_length)?;
    let trans: Vec<f64> = segments.iter().map(|s| s.translation).collect();
    let rot: Vec<f64> = segments.iter().map(|s| s.rotation).collect();
    Ok(RteResult {
        translation: ErrorStats::from_samples(&trans),
        rotation: ErrorStats::from_samples(&rot),
    })
}

/// ATE statistics of the globally aligned estimate, grouped by the label of
/// each associated truth sample.
pub fn ate_by_label(ate: &AteResult, estimate: &Trajectory, truth: &Trajectory, labels: &[String]) -> BTreeMap<String, ErrorStats> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &(i, e) in &ate.errors {
        if let Some(j) = truth.nearest(estimate.stamps[i]) {
            groups.entry(labels[j].clone()).or_default().push(e);
        }
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, ErrorStats::from_samples(&v)))
        .collect()
}
