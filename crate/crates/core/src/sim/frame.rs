//! Sensor frame schema and JSONL persistence.
//!
//! One JSON object per line, one line per joint-rate tick:
//!
//! ```text
//! t                 time (s)
//! truth.pose        {"rotation": [[3],[3],[3]] row-major, "translation": [3]} (m)
//! truth.velocity    world-frame velocity (m/s)
//! imu               null, or {"t", "accel" (m/s², specific force), "gyro" (rad/s),
//!                   "bias" (true [accel; gyro] bias)} for the IMU sample taken since the previous tick
//! joints            {"angles" (rad), "velocities" (rad/s), "torques" (N·m)}, 12 each, legs LF, LH, RH, RF
//! foot_forces       measured vertical foot forces (N)
//! true_foot_forces  noise-free vertical foot forces (N)
//! contacts          true contact flags
//! lidar             null, or {"t", "pose", "masked": ["Tx", ...]}
//! terrain           terrain label under the robot
//! payload           carried mass (kg)
//! ```

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::config::AxisMask;
use crate::error::Result;
use crate::kinematics::{ContactFlags, JointState, LEG_COUNT};
use crate::lie::Pose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
    pub bias: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarObservation {
    pub t: f64,
    pub pose: Pose,
    pub masked: AxisMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFrame {
    pub t: f64,
    pub truth: TruthState,
    pub imu: Option<ImuSample>,
    pub joints: JointState,
    pub foot_forces: [f64; LEG_COUNT],
    pub true_foot_forces: [f64; LEG_COUNT],
    pub contacts: ContactFlags,
    pub lidar: Option<LidarObservation>,
    pub terrain: String,
    pub payload: f64,
}

pub fn write_jsonl<W: Write>(frames: &[SimFrame], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<SimFrame>> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn save_frames(path: &Path, frames: &[SimFrame]) -> Result<()> {
    write_jsonl(frames, std::fs::File::create(path)?)
}

pub fn load_frames(path: &Path) -> Result<Vec<SimFrame>> {
    read_jsonl(std::fs::File::open(path)?)
}
