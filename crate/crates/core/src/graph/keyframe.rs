//! Splits a joint-rate frame stream into keyframe intervals at the LiDAR ticks.

use crate::graph::imu::ImuMeasurement;
use crate::sim::{LidarObservation, SimFrame};

/// Sensor data of one keyframe interval `(t_prev, t]`.
#[derive(Debug, Clone)]
pub struct Keyframe<'a> {
    pub index: usize,
    pub t: f64,
    /// Samples with `t_prev ≤ t_k < t`, each held until the next sample or `t`.
    pub imu: Vec<ImuMeasurement>,
    pub lidar: LidarObservation,
    /// Joint-rate frames after the previous keyframe up to and including this one.
    pub frames: &'a [SimFrame],
}

impl Keyframe<'_> {
    /// The keyframe tick itself.
    pub fn frame(&self) -> &SimFrame {
        self.frames.last().expect("keyframe owns its tick")
    }
}

/// Sample stamps within this of a keyframe stamp count as simultaneous (s).
const TIME_EPS: f64 = 1e-9;

/// Every frame carrying a LiDAR observation starts a keyframe; the first has
/// no IMU interval.
pub fn keyframes(frames: &[SimFrame]) -> Vec<Keyframe<'_>> {
    let samples: Vec<_> = frames.iter().filter_map(|f| f.imu.as_ref()).collect();
    let mut out: Vec<Keyframe<'_>> = Vec::new();
    let mut start = 0usize;
    let mut next_sample = 0usize;
    for (i, f) in frames.iter().enumerate() {
        let Some(lidar) = &f.lidar else { continue };
        let mut imu = Vec::new();
        if let Some(prev) = out.last() {
            while next_sample < samples.len() && samples[next_sample].t < prev.t - TIME_EPS {
                next_sample += 1;
            }
            while next_sample < samples.len() && samples[next_sample].t < f.t - TIME_EPS {
                let s = samples[next_sample];
                let end = samples.get(next_sample + 1).map_or(f.t, |n| n.t.min(f.t));
                imu.push(ImuMeasurement {
                    t: s.t,
                    dt: end - s.t,
                    accel: s.accel,
                    gyro: s.gyro,
                });
                next_sample += 1;
            }
        }
        out.push(Keyframe {
            index: out.len(),
            t: f.t,
            imu,
            lidar: lidar.clone(),
            frames: &frames[start..=i],
        });
        start = i + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, ScenarioConfig};

    #[test]
    fn intervals_partition_the_stream() {
        let mut cfg = ScenarioConfig::nominal(3);
        cfg.duration = 2.0;
        let frames = simulate(&cfg).unwrap();
        let kfs = keyframes(&frames);
        assert_eq!(kfs.len(), 21);
        assert!(kfs[0].imu.is_empty());
        let mut covered = 0;
        for (i, k) in kfs.iter().enumerate() {
            assert_eq!(k.index, i);
            assert_eq!(k.frame().t, k.t);
            covered += k.frames.len();
            if i > 0 {
                assert_eq!(k.frames.len(), cfg.joints_per_keyframe());
                assert_eq!(k.imu.len(), cfg.imu_per_keyframe());
                let span: f64 = k.imu.iter().map(|m| m.dt).sum();
                assert!((span - (k.t - kfs[i - 1].t)).abs() < 1e-12);
                assert!((k.imu[0].t - kfs[i - 1].t).abs() < 1e-12);
            }
        }
        assert_eq!(covered, frames.len());
    }
}
