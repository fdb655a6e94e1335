use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const SUBCARRIERS: usize = 30;
pub const WINDOW: usize = 20;
/// `[amp_rx1, phase_rx1, amp_rx2, phase_rx2]`
pub const CHANNELS: usize = 4;
pub const IMAGE_SHAPE: [usize; 3] = [SUBCARRIERS, WINDOW, CHANNELS];
pub const IMAGE_LEN: usize = SUBCARRIERS * WINDOW * CHANNELS;

/// Network input: subcarrier × time × channel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiImage {
    data: Vec<f64>,
    /// Timestamp of the last CSI sample in the window.
    pub end_timestamp: f64,
}

impl CsiImage {
    pub fn new(data: Vec<f64>, end_timestamp: f64) -> Result<Self> {
        if data.len() != IMAGE_LEN {
            return Err(Error::LengthMismatch {
                what: "CSI image",
                left: IMAGE_LEN,
                right: data.len(),
            });
        }
        Ok(Self { data, end_timestamp })
    }

    pub fn zeros(end_timestamp: f64) -> Self {
        Self {
            data: alloc::vec![0.0; IMAGE_LEN],
            end_timestamp,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(subcarrier: usize, time: usize, channel: usize) -> usize {
        (subcarrier * WINDOW + time) * CHANNELS + channel
    }

    pub fn get(&self, subcarrier: usize, time: usize, channel: usize) -> f64 {
        self.data[Self::offset(subcarrier, time, channel)]
    }
}
