//! Neural leg kinematics model: input windows, network and model files.

pub mod blob;
pub mod network;
pub mod window;

pub use blob::{ModelBlob, SequenceParams};
pub use network::{
    Activation, Architecture, BatchActivations, GradientScope, Gradients, LayerShape, LegNetwork, OfflineParams,
    OnlineParams, TwistPrediction, Upstream,
};
pub use window::{
    build_window, keyframe_samples, FrameEncoder, InputWindow, KeyframeSample, SensorFrame34, Standardizer, FRAME_DIM,
    INPUT_DIM, WINDOW_LEN,
};
