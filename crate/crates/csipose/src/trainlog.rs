//! One JSON record per training epoch.

use csipose_core::train::EpochStats;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub mean_position_loss: f64,
    pub mean_huber_loss: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

impl EpochRecord {
    pub fn new(s: &EpochStats, wall_time: f64) -> Self {
        Self {
            epoch: s.epoch + 1,
            learning_rate: s.learning_rate,
            mean_loss: s.mean_loss,
            mean_position_loss: s.mean_position_loss,
            mean_huber_loss: s.mean_huber_loss,
            wall_time,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}
