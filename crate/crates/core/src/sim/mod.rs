//! Deterministic synthetic quadruped walking simulator.

pub mod config;
pub mod frame;
pub mod gait;
pub mod motion;
pub mod sensors;

pub use config::{
    Axis, AxisMask, DegeneracyInterval, GaitConfig, MotionConfig, NoiseConfig, PayloadStep, ScenarioConfig,
    TerrainKind, TerrainProfile, TerrainSegment, GRAVITY,
};
pub use frame::{load_frames, read_jsonl, save_frames, write_jsonl, ImuSample, LidarObservation, SimFrame};
pub use gait::{generate_gait, GaitPlan};
pub use motion::BodyTrajectory;
pub use sensors::{lidar_observation, simulate, synthesize_sensors};
