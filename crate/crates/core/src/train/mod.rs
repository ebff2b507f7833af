//! Offline batch training of the leg kinematics network.

pub mod adam;
pub mod dataset;
pub mod loss;
pub mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use dataset::{reference_twist, Batch, Sample, SampleSet, SequenceData, TrainingSequence};
pub use loss::{sequence_loss, LossTerms, LossWeights, BCE_CLIP};
pub use trainer::{
    evaluate_network_rte, moving_average, network_trajectory, online_gradient, train_offline, SequenceValidation,
    TrainConfig, TrainOutput, TrainReport,
};
