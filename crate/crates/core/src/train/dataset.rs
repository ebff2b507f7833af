//! Training sequences built from simulated frame streams.

use nalgebra::{DMatrix, Vector6};

use crate::error::{Error, Result};
use crate::lie::{log_se3, Pose};
use crate::nn::window::{build_window, keyframe_samples, FrameEncoder, InputWindow, KeyframeSample, SensorFrame34, Standardizer, INPUT_DIM, WINDOW_LEN};
use crate::sim::SimFrame;

/// Keyframe stream of one recorded sequence.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub name: String,
    pub terrain: String,
    pub payload: f64,
    /// Whether torque and force channels were encoded.
    pub tactile: bool,
    pub keyframes: Vec<KeyframeSample>,
}

impl SequenceData {
    /// Labels come from the first frame.
    pub fn from_frames(name: &str, frames: &[SimFrame], encoder: &mut FrameEncoder) -> Result<Self> {
        let first = frames.first().ok_or(Error::InsufficientHistory { needed: 1, available: 0 })?;
        Ok(Self {
            name: name.into(),
            terrain: first.terrain.clone(),
            payload: first.payload,
            tactile: encoder.tactile(),
            keyframes: keyframe_samples(frames, encoder),
        })
    }

    /// First keyframe index of the held-out tail.
    pub fn split_index(&self, holdout: f64) -> usize {
        let n = self.keyframes.len();
        (((1.0 - holdout) * n as f64).floor() as usize).clamp(WINDOW_LEN - 1, n)
    }

    pub fn training_frames(&self, holdout: f64) -> impl Iterator<Item = &SensorFrame34> {
        self.keyframes[..self.split_index(holdout)].iter().map(|k| &k.input)
    }

    /// Samples for keyframes `range`; the window of keyframe `i` also uses `i-1`, `i-2`.
    pub fn samples(&self, range: std::ops::Range<usize>, standardizer: &Standardizer) -> Result<SampleSet> {
        let start = range.start.max(WINDOW_LEN - 1);
        let mut set = SampleSet::default();
        let frames: Vec<SensorFrame34> = self.keyframes.iter().map(|k| k.input).collect();
        for i in start..range.end.min(self.keyframes.len()) {
            let window = build_window(&frames[i + 1 - WINDOW_LEN..=i], standardizer)?;
            let prev = &self.keyframes[i - 1];
            let cur = &self.keyframes[i];
            set.push(Sample {
                window,
                twist: reference_twist(&prev.truth, &cur.truth, cur.t - prev.t)?,
                contacts: cur.contacts,
                t: cur.t,
                truth: cur.truth,
                terrain: cur.terrain.clone(),
            });
        }
        Ok(set)
    }
}

/// Constant body twist that moves `from` to `to` in `dt`.
pub fn reference_twist(from: &Pose, to: &Pose, dt: f64) -> Result<Vector6<f64>> {
    Ok(log_se3(&from.between(to))?.to_vector() / dt)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub window: InputWindow,
    pub twist: Vector6<f64>,
    pub contacts: [bool; 4],
    pub t: f64,
    pub truth: Pose,
    pub terrain: String,
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
}

impl SampleSet {
    fn push(&mut self, s: Sample) {
        self.samples.push(s);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Column-stacked inputs, twists and contact labels for `indices`.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let n = indices.len();
        let mut inputs = DMatrix::zeros(INPUT_DIM, n);
        let mut twists = DMatrix::zeros(6, n);
        let mut contacts = DMatrix::zeros(4, n);
        for (c, &i) in indices.iter().enumerate() {
            let s = &self.samples[i];
            inputs.column_mut(c).copy_from(&s.window);
            twists.column_mut(c).copy_from(&s.twist);
            for leg in 0..4 {
                contacts[(leg, c)] = if s.contacts[leg] { 1.0 } else { 0.0 };
            }
        }
        Batch { inputs, twists, contacts }
    }

    pub fn all(&self) -> Batch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: DMatrix<f64>,
    pub twists: DMatrix<f64>,
    pub contacts: DMatrix<f64>,
}

/// Training and held-out samples of one sequence.
#[derive(Debug, Clone)]
pub struct TrainingSequence {
    pub name: String,
    pub terrain: String,
    pub payload: f64,
    pub train: SampleSet,
    pub validation: SampleSet,
}

impl TrainingSequence {
    pub fn build(data: &SequenceData, standardizer: &Standardizer, holdout: f64) -> Result<Self> {
        let split = data.split_index(holdout);
        Ok(Self {
            name: data.name.clone(),
            terrain: data.terrain.clone(),
            payload: data.payload,
            train: data.samples(0..split, standardizer)?,
            validation: data.samples(split..data.keyframes.len(), standardizer)?,
        })
    }
}
