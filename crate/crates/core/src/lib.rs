//! Tightly coupled LiDAR-IMU-leg odometry with a neural leg kinematics model
//! whose adaptive layer is estimated online inside a fixed-lag smoother.

pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kinematics;
pub mod lie;
pub mod nn;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
