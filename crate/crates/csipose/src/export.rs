//! Timestamped 17×3 skeleton sequences for external plotting.

use std::fmt::Write as _;
use std::path::Path;

use csipose_core::skeleton::{SkeletonPose, JOINT_COUNT};
use serde::{Deserialize, Serialize};

use crate::bytes::write_file;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedPose {
    pub timestamp: f64,
    pub subject: String,
    pub joints: [[f64; 3]; JOINT_COUNT],
}

impl ExportedPose {
    pub fn new(timestamp: f64, subject: impl Into<String>, pose: &SkeletonPose) -> Self {
        Self { timestamp, subject: subject.into(), joints: pose.joints }
    }

    pub fn pose(&self) -> SkeletonPose {
        SkeletonPose { joints: self.joints }
    }
}

pub fn write_sequence(path: &Path, poses: &[ExportedPose]) -> Result<()> {
    let mut out = String::new();
    for p in poses {
        let _ = writeln!(out, "{}", serde_json::to_string(p).expect("pose serializes"));
    }
    write_file(path, out.as_bytes())
}

pub fn read_sequence(path: &Path) -> Result<Vec<ExportedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse { path: path.into(), line: i + 1, message: e.to_string() })
        })
        .collect()
}
