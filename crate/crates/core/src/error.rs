use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle {angle} is too close to pi for a stable logarithm")]
    NearPiRotation { angle: f64 },
    #[error("joint {joint} of leg {leg} at {value} rad is outside [{min}, {max}]")]
    JointLimit {
        leg: usize,
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("leg index {0} is out of range")]
    InvalidLeg(usize),
    #[error("no foot is in contact")]
    NoContact,
    #[error("foot target for leg {leg} is outside the reachable workspace")]
    IkUnreachable { leg: usize },
    #[error("window needs {needed} frames, got {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("no IMU samples in the preintegration interval")]
    EmptyInterval,
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("trajectories do not overlap in time")]
    NoOverlap,
    #[error("trajectory too short for a {0} m segment")]
    TooShort(f64),
    #[error("parameter history has zero variance")]
    DegenerateHistory,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
