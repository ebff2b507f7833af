//! Online-parameter embeddings and network-only motion-error histories.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::keyframe::Keyframe;
use crate::graph::methods::NeuralSource;
use crate::graph::smoother::KeyframeEstimate;
use crate::nn::blob::ModelBlob;
use crate::nn::network::OnlineParams;
use crate::train::dataset::reference_twist;
use crate::train::trainer::moving_average;

/// Two-component principal-axis projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal directions; a zero row when that component has no variance.
    pub components: [Vec<f64>; 2],
    pub variances: [f64; 2],
}

impl Pca {
    /// Fits on every point of every history. Needs at least three points.
    pub fn fit<'a>(histories: impl IntoIterator<Item = &'a [Vec<f64>]>) -> Result<Self> {
        let points: Vec<&Vec<f64>> = histories.into_iter().flatten().collect();
        if points.len() < 3 {
            return Err(Error::InsufficientHistory {
                needed: 3,
                available: points.len(),
            });
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::ShapeMismatch("history points must share a non-zero dimension".into()));
        }
        let n = points.len() as f64;
        let mut mean = DVector::zeros(dim);
        for p in &points {
            mean += DVector::from_column_slice(p);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(dim, dim);
        let mut scale = 0.0f64;
        for p in &points {
            let d = DVector::from_column_slice(p) - &mean;
            cov.ger(1.0 / n, &d, &d, 1.0);
            scale = scale.max(p.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        // Variance below this is rounding noise of the centering.
        let floor = (1e-12 * scale.max(1e-300)).powi(2);
        if eig.eigenvalues[order[0]] <= floor {
            return Err(Error::DegenerateHistory);
        }
        // Secondary components at rounding level of the leading one count as absent.
        let secondary_floor = floor.max(1e-12 * eig.eigenvalues[order[0]]);
        let component = |k: usize| -> (Vec<f64>, f64) {
            let Some(&i) = order.get(k) else { return (vec![0.0; dim], 0.0) };
            let lambda = eig.eigenvalues[i];
            if lambda <= secondary_floor {
                return (vec![0.0; dim], 0.0);
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .enumerate()
                .fold((0, 0.0f64), |best, (j, x)| if x.abs() > best.1.abs() { (j, x) } else { best });
            if v[lead.0] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (v, lambda)
        };
        let (c0, v0) = component(0);
        let (c1, v1) = component(1);
        Ok(Self {
            mean: mean.iter().copied().collect(),
            components: [c0, c1],
            variances: [v0, v1],
        })
    }

    pub fn project(&self, point: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = point.iter().zip(&self.mean).zip(c).map(|((x, m), w)| (x - m) * w).sum();
        }
        out
    }
}

/// Projects a parameter history onto its own first two principal axes.
pub fn embed_online_params(history: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let pca = Pca::fit([history])?;
    Ok(history.iter().map(|p| pca.project(p)).collect())
}

/// Projects several sessions onto principal axes fitted to all of them jointly.
pub fn embed_sessions(sessions: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<[f64; 2]>>> {
    let pca = Pca::fit(sessions.iter().map(|s| s.as_slice()))?;
    Ok(sessions.iter().map(|s| s.iter().map(|p| pca.project(p)).collect()).collect())
}

pub fn path_length(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// Online-parameter history of a run, oldest first.
pub fn online_history(estimates: &[KeyframeEstimate]) -> Vec<Vec<f64>> {
    estimates.iter().filter_map(|e| e.m_on.clone()).collect()
}

/// Network-only motion error of one keyframe step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub t: f64,
    pub index: usize,
    pub terrain: String,
    pub payload: f64,
    /// `‖(ξ − ξ_true)_trans‖ Δt` (m) with the parameters estimated up to the previous keyframe.
    pub adapted: f64,
    /// Same with the initial parameters of the model.
    pub frozen: f64,
    pub adapted_average: f64,
    pub frozen_average: f64,
}

/// Window over which the averages in [`residual_history`] are taken (s).
pub const RESIDUAL_AVERAGE_WINDOW: f64 = 1.0;

/// Compares network twists against the truth at every keyframe that has a full
/// input window. The adapted twist at keyframe `i` uses `m_on` of estimate `i − 1`;
/// runs without online parameters use the initial ones.
pub fn residual_history(blob: &ModelBlob, keyframes: &[Keyframe<'_>], estimates: &[KeyframeEstimate]) -> Result<Vec<ResidualRecord>> {
    if estimates.len() != keyframes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates for {} keyframes",
            estimates.len(),
            keyframes.len()
        )));
    }
    let mut source = NeuralSource::new("residual-history", blob, false)?;
    let arch = &blob.architecture;
    let frozen = blob.initial_online()?;
    let mut out = Vec::new();
    for (i, kf) in keyframes.iter().enumerate() {
        let Some(window) = source.window(kf)? else { continue };
        if i == 0 {
            continue;
        }
        let prev = &keyframes[i - 1];
        let dt = kf.t - prev.t;
        let truth = reference_twist(&prev.frame().truth.pose, &kf.frame().truth.pose, dt)?;
        let adapted_params = match &estimates[i - 1].m_on {
            Some(m) => OnlineParams::from_slice(arch, m)?,
            None => frozen.clone(),
        };
        let error = |online: &OnlineParams| -> Result<f64> {
            let twist = source.network().forward(&window, online)?.twist;
            Ok((twist - truth).fixed_rows::<3>(3).norm() * dt)
        };
        out.push(ResidualRecord {
            t: kf.t,
            index: kf.index,
            terrain: kf.frame().terrain.clone(),
            payload: kf.frame().payload,
            adapted: error(&adapted_params)?,
            frozen: error(&frozen)?,
            adapted_average: 0.0,
            frozen_average: 0.0,
        });
    }
    if out.len() >= 2 {
        let period = (out[out.len() - 1].t - out[0].t) / (out.len() - 1) as f64;
        let window = ((RESIDUAL_AVERAGE_WINDOW / period).round() as usize).max(1);
        let a = moving_average(&out.iter().map(|r| r.adapted).collect::<Vec<_>>(), window);
        let f = moving_average(&out.iter().map(|r| r.frozen).collect::<Vec<_>>(), window);
        for (r, (a, f)) in out.iter_mut().zip(a.into_iter().zip(f)) {
            r.adapted_average = a;
            r.frozen_average = f;
        }
    } else if let Some(r) = out.first_mut() {
        r.adapted_average = r.adapted;
        r.frozen_average = r.frozen;
    }
    Ok(out)
}

pub fn residual_history_csv(records: &[ResidualRecord]) -> String {
    let mut out = String::from("t,index,terrain,payload,adapted,frozen,adapted_average,frozen_average\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t, r.index, r.terrain, r.payload, r.adapted, r.frozen, r.adapted_average, r.frozen_average
        );
    }
    out
}
