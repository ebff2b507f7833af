//! Network input assembly: 34-channel sensor frames sampled on the keyframe
//! tick and stacked three deep after per-channel standardization.

use std::ops::Range;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::LEG_COUNT;
use crate::lie::Pose;
use crate::sim::SimFrame;

pub const FRAME_DIM: usize = 34;
pub const WINDOW_LEN: usize = 3;
pub const INPUT_DIM: usize = FRAME_DIM * WINDOW_LEN;

pub const ACCEL_CHANNELS: Range<usize> = 0..3;
pub const GYRO_CHANNELS: Range<usize> = 3..6;
pub const ANGLE_CHANNELS: Range<usize> = 6..18;
pub const TORQUE_CHANNELS: Range<usize> = 18..30;
pub const FORCE_CHANNELS: Range<usize> = 30..34;

/// Noise-free foot force above which a foot counts as in contact (N).
pub const CONTACT_FORCE_THRESHOLD: f64 = 1.0;

pub type InputWindow = SVector<f64, INPUT_DIM>;

/// One raw 34-channel sample `[accel, gyro, angles, torques, forces]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame34 {
    pub t: f64,
    pub values: SVector<f64, FRAME_DIM>,
}

/// Turns simulator frames into network samples.
///
/// With `tactile` off the torque and foot-force channels are left at zero and
/// never read; [`FrameEncoder::tactile_reads`] counts the reads that did happen.
#[derive(Debug, Clone)]
pub struct FrameEncoder {
    tactile: bool,
    tactile_reads: usize,
}

impl FrameEncoder {
    pub fn new(tactile: bool) -> Self {
        Self { tactile, tactile_reads: 0 }
    }

    pub fn tactile(&self) -> bool {
        self.tactile
    }

    pub fn tactile_reads(&self) -> usize {
        self.tactile_reads
    }

    /// Encodes the joint-rate frame `frame` using the IMU sample `imu_frame`
    /// (the latest frame at or before it that carries one).
    pub fn encode(&mut self, frame: &SimFrame, imu_frame: &SimFrame) -> SensorFrame34 {
        let mut v = SVector::<f64, FRAME_DIM>::zeros();
        if let Some(imu) = &imu_frame.imu {
            v.fixed_rows_mut::<3>(ACCEL_CHANNELS.start).copy_from(&imu.accel);
            v.fixed_rows_mut::<3>(GYRO_CHANNELS.start).copy_from(&imu.gyro);
        }
        v.fixed_rows_mut::<12>(ANGLE_CHANNELS.start).copy_from(&frame.joints.angles);
        if self.tactile {
            self.tactile_reads += 1;
            v.fixed_rows_mut::<12>(TORQUE_CHANNELS.start).copy_from(&frame.joints.torques);
            for leg in 0..LEG_COUNT {
                v[FORCE_CHANNELS.start + leg] = frame.foot_forces[leg];
            }
        }
        SensorFrame34 { t: frame.t, values: v }
    }
}

/// Keyframe-tick sample extracted from a frame stream.
#[derive(Debug, Clone)]
pub struct KeyframeSample {
    pub t: f64,
    /// Index of the keyframe tick in the joint-rate stream.
    pub frame_index: usize,
    pub input: SensorFrame34,
    pub truth: Pose,
    /// Contacts from thresholding noise-free foot forces.
    pub contacts: [bool; LEG_COUNT],
    pub terrain: String,
    pub payload: f64,
}

/// Samples every frame that carries a LiDAR observation (the keyframe ticks).
pub fn keyframe_samples(frames: &[SimFrame], encoder: &mut FrameEncoder) -> Vec<KeyframeSample> {
    let mut last_imu: Option<usize> = None;
    let mut out = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        if f.imu.is_some() {
            last_imu = Some(i);
        }
        if f.lidar.is_none() {
            continue;
        }
        let imu_frame = &frames[last_imu.unwrap_or(i)];
        out.push(KeyframeSample {
            t: f.t,
            frame_index: i,
            input: encoder.encode(f, imu_frame),
            truth: f.truth.pose,
            contacts: f.true_foot_forces.map(|force| force > CONTACT_FORCE_THRESHOLD),
            terrain: f.terrain.clone(),
            payload: f.payload,
        });
    }
    out
}

/// Per-channel affine normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub const STD_FLOOR: f64 = 1e-6;

    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; FRAME_DIM],
            std: vec![1.0; FRAME_DIM],
        }
    }

    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a SensorFrame34>) -> Result<Self> {
        let mut n = 0usize;
        let mut mean = [0.0; FRAME_DIM];
        let mut m2 = [0.0; FRAME_DIM];
        // Welford accumulation per channel.
        for f in frames {
            n += 1;
            for c in 0..FRAME_DIM {
                let x = f.values[c];
                let d = x - mean[c];
                mean[c] += d / n as f64;
                m2[c] += d * (x - mean[c]);
            }
        }
        if n == 0 {
            return Err(Error::InsufficientHistory { needed: 1, available: 0 });
        }
        let std = m2.iter().map(|s| (s / n as f64).sqrt().max(Self::STD_FLOOR)).collect();
        Ok(Self { mean: mean.to_vec(), std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != FRAME_DIM || self.std.len() != FRAME_DIM {
            return Err(Error::ShapeMismatch(format!("standardizer must have {FRAME_DIM} channels")));
        }
        Ok(())
    }

    pub fn apply(&self, f: &SensorFrame34) -> SVector<f64, FRAME_DIM> {
        SVector::from_fn(|c, _| (f.values[c] - self.mean[c]) / self.std[c])
    }

    pub fn invert(&self, z: &SVector<f64, FRAME_DIM>) -> SVector<f64, FRAME_DIM> {
        SVector::from_fn(|c, _| z[c] * self.std[c] + self.mean[c])
    }
}

/// Stacks the newest three frames (newest first) of a chronological slice.
pub fn build_window(frames: &[SensorFrame34], standardizer: &Standardizer) -> Result<InputWindow> {
    if frames.len() < WINDOW_LEN {
        return Err(Error::InsufficientHistory {
            needed: WINDOW_LEN,
            available: frames.len(),
        });
    }
    let recent = &frames[frames.len() - WINDOW_LEN..];
    if recent.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::ShapeMismatch("window frames must have increasing timestamps".into()));
    }
    let mut window = InputWindow::zeros();
    for (slot, frame) in recent.iter().rev().enumerate() {
        window
            .fixed_rows_mut::<FRAME_DIM>(slot * FRAME_DIM)
            .copy_from(&standardizer.apply(frame));
    }
    Ok(window)
}

/// Undoes standardization of a window, newest frame first.
pub fn unstack_window(window: &InputWindow, standardizer: &Standardizer) -> [SVector<f64, FRAME_DIM>; WINDOW_LEN] {
    std::array::from_fn(|slot| standardizer.invert(&window.fixed_rows::<FRAME_DIM>(slot * FRAME_DIM).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frames(n: usize, seed: u64) -> Vec<SensorFrame34> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| SensorFrame34 {
                t: i as f64 * 0.1,
                values: SVector::from_fn(|c, _| rng.gen_range(-3.0..3.0) * (c + 1) as f64),
            })
            .collect()
    }

    #[test]
    fn fit_data_is_standardized() {
        let frames = random_frames(500, 1);
        let s = Standardizer::fit(&frames).unwrap();
        for c in 0..FRAME_DIM {
            let z: Vec<f64> = frames.iter().map(|f| s.apply(f)[c]).collect();
            let m = z.iter().sum::<f64>() / z.len() as f64;
            let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / z.len() as f64;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_channel_hits_floor() {
        let mut frames = random_frames(10, 2);
        for f in &mut frames {
            f.values[20] = 4.0;
        }
        let s = Standardizer::fit(&frames).unwrap();
        assert_eq!(s.std[20], Standardizer::STD_FLOOR);
    }

    #[test]
    fn mean_frames_give_zero_window() {
        let s = Standardizer {
            mean: (0..FRAME_DIM).map(|c| c as f64 * 0.25 - 3.0).collect(),
            std: (0..FRAME_DIM).map(|c| 0.5 + c as f64 * 0.125).collect(),
        };
        let mean = SVector::from_column_slice(&s.mean);
        let at_mean: Vec<_> = (0..3).map(|i| SensorFrame34 { t: i as f64, values: mean }).collect();
        assert_eq!(build_window(&at_mean, &s).unwrap(), InputWindow::zeros());

        let mut one_sigma = at_mean.clone();
        for f in &mut one_sigma {
            f.values[7] += s.std[7];
        }
        let w = build_window(&one_sigma, &s).unwrap();
        for slot in 0..3 {
            assert_eq!(w[slot * FRAME_DIM + 7], 1.0);
            assert_eq!(w[slot * FRAME_DIM + 8], 0.0);
        }
    }

    #[test]
    fn window_roundtrip() {
        let frames = random_frames(60, 4);
        let s = Standardizer::fit(&frames).unwrap();
        for end in 3..frames.len() {
            let w = build_window(&frames[..end], &s).unwrap();
            let back = unstack_window(&w, &s);
            for (slot, raw) in back.iter().enumerate() {
                let expected = frames[end - 1 - slot].values;
                assert!((raw - expected).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn window_errors() {
        let frames = random_frames(3, 5);
        let s = Standardizer::identity();
        assert!(matches!(
            build_window(&frames[..2], &s),
            Err(Error::InsufficientHistory { needed: 3, available: 2 })
        ));
        let mut bad = frames.clone();
        bad[2].t = bad[1].t;
        assert!(build_window(&bad, &s).is_err());
    }
}
