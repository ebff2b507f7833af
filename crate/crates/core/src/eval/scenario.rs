//! Runs registered odometry methods over a recorded frame stream.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use serde::{Deserialize, Serialize};

use super::metrics::{ate_by_label, compute_ate, rte_segments, ErrorStats, RteResult, Trajectory, RTE_SEGMENT_LENGTH};
use crate::error::{Error, Result};
use crate::graph::keyframe::keyframes;
use crate::graph::methods::{MethodRegistry, MethodResources};
use crate::graph::smoother::{run_smoother, KeyframeEstimate, SmootherConfig};
use crate::sim::SimFrame;

/// Errors restricted to the keyframes on one terrain label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainMetrics {
    pub ate: ErrorStats,
    /// Segments starting on this terrain; `None` when there are none.
    pub rte: Option<RteResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub keyframes: usize,
    /// Translational error after rigid alignment (m).
    pub ate: ErrorStats,
    /// Per 1 m segment; translation in m, rotation in deg. `count` is zero
    /// when the run is shorter than one segment.
    pub rte: RteResult,
    pub terrain: BTreeMap<String, TerrainMetrics>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let mut values = vec![self.ate, self.rte.translation, self.rte.rotation];
        for t in self.terrain.values() {
            values.push(t.ate);
            if let Some(r) = t.rte {
                values.extend([r.translation, r.rotation]);
            }
        }
        let ok = values
            .iter()
            .flat_map(|s| [s.mean, s.std, s.rmse, s.max])
            .all(|v| v.is_finite() && v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("metrics must be finite and non-negative".into()))
        }
    }
}

/// Truth poses and terrain labels at the LiDAR ticks.
pub fn keyframe_truth(frames: &[SimFrame]) -> Result<(Trajectory, Vec<String>)> {
    let ticks: Vec<&SimFrame> = frames.iter().filter(|f| f.lidar.is_some()).collect();
    let truth = Trajectory::from_pairs(ticks.iter().map(|f| (f.t, f.truth.pose)))?;
    Ok((truth, ticks.iter().map(|f| f.terrain.clone()).collect()))
}

pub fn estimate_trajectory(estimates: &[KeyframeEstimate]) -> Result<Trajectory> {
    Trajectory::from_pairs(estimates.iter().map(|e| (e.t, e.pose)))
}

/// ATE and RTE of `estimates` against the truth in `frames`, broken down by terrain.
pub fn evaluate(method: &str, estimates: &[KeyframeEstimate], frames: &[SimFrame]) -> Result<MetricsReport> {
    let (truth, labels) = keyframe_truth(frames)?;
    let estimate = estimate_trajectory(estimates)?;
    let ate = compute_ate(&estimate, &truth)?;
    // A run shorter than one segment reports RTE over zero segments.
    let segments = match rte_segments(&estimate, &truth, RTE_SEGMENT_LENGTH) {
        Err(Error::TooShort(_)) => Vec::new(),
        other => other?,
    };

    let mut rte_groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in &segments {
        let g = rte_groups.entry(&labels[s.truth_start]).or_default();
        g.0.push(s.translation);
        g.1.push(s.rotation);
    }
    let terrain = ate_by_label(&ate, &estimate, &truth, &labels)
        .into_iter()
        .map(|(label, stats)| {
            let rte = rte_groups.get(label.as_str()).map(|(t, r)| RteResult {
                translation: ErrorStats::from_samples(t),
                rotation: ErrorStats::from_samples(r),
            });
            (label, TerrainMetrics { ate: stats, rte })
        })
        .collect();
    let trans: Vec<f64> = segments.iter().map(|s| s.translation).collect();
    let rot: Vec<f64> = segments.iter().map(|s| s.rotation).collect();
    let report = MetricsReport {
        method: method.into(),
        keyframes: estimates.len(),
        ate: ate.stats,
        rte: RteResult {
            translation: ErrorStats::from_samples(&trans),
            rotation: ErrorStats::from_samples(&rot),
        },
        terrain,
    };
    report.validate()?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub method: String,
    pub estimates: Vec<KeyframeEstimate>,
    pub report: MetricsReport,
    /// Torque and foot-force reads made by the method's input encoder.
    pub tactile_reads: usize,
}

/// Builds `method` from `registry` and runs it over the whole stream.
pub fn run_scenario(
    frames: &[SimFrame],
    method: &str,
    registry: &MethodRegistry,
    resources: &MethodResources,
    config: &SmootherConfig,
) -> Result<ScenarioRun> {
    let source = registry.build(method, resources)?;
    let kfs = keyframes(frames);
    let (estimates, smoother) = run_smoother(&kfs, config.clone(), source)?;
    let report = evaluate(method, &estimates, frames)?;
    Ok(ScenarioRun {
        method: method.into(),
        tactile_reads: smoother.source().tactile_reads(),
        estimates,
        report,
    })
}

pub fn write_estimates<W: Write>(estimates: &[KeyframeEstimate], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for e in estimates {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates<R: Read>(reader: R) -> Result<Vec<KeyframeEstimate>> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
