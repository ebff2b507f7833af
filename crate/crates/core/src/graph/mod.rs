//! Fixed-lag smoother fusing IMU preintegration, LiDAR poses and leg odometry.

pub mod covariance;
pub mod factors;
pub mod imu;
pub mod keyframe;
pub mod linalg;
pub mod methods;
pub mod smoother;
