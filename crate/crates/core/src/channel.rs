//! Multipath channel response: the sum over propagation paths of complex
//! attenuation times the delay phase `exp(-j 2π f τ)`, split into static
//! and dynamic path groups.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Static,
    Dynamic,
}

/// One propagation path at a single instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathComponent {
    pub attenuation: Complex64,
    /// Time of flight in seconds.
    pub delay: f64,
    pub kind: PathKind,
}

/// `exp(-j 2π f τ)`, reducing `f τ` to its fractional cycle first so large
/// products keep full phase precision.
pub fn delay_phasor(frequency: f64, delay: f64) -> Complex64 {
    let cycles = frequency * delay;
    let frac = cycles - libm::floor(cycles);
    let angle = -TAU * frac;
    Complex64::new(libm::cos(angle), libm::sin(angle))
}

/// Total response of `paths` at frequency `frequency` (Hz).
pub fn channel_response(paths: &[PathComponent], frequency: f64) -> Complex64 {
    paths
        .iter()
        .map(|p| p.attenuation * delay_phasor(frequency, p.delay))
        .sum()
}

/// `(static, dynamic)` partial responses; they sum to [`channel_response`].
pub fn decompose_response(paths: &[PathComponent], frequency: f64) -> (Complex64, Complex64) {
    let mut parts = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for p in paths {
        let term = p.attenuation * delay_phasor(frequency, p.delay);
        match p.kind {
            PathKind::Static => parts.0 += term,
            PathKind::Dynamic => parts.1 += term,
        }
    }
    parts
}

/// Evenly spaced subcarrier frequencies centred on the carrier.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubcarrierGrid {
    pub center_frequency: f64,
    pub bandwidth: f64,
    pub subcarrier_count: usize,
}

impl Default for SubcarrierGrid {
    fn default() -> Self {
        Self {
            center_frequency: 5.0e9,
            bandwidth: 20.0e6,
            subcarrier_count: crate::image::SUBCARRIERS,
        }
    }
}

impl SubcarrierGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency > 0.0 && self.bandwidth > 0.0 && self.subcarrier_count > 0) {
            return Err(Error::InvalidConfig(alloc::format!("invalid subcarrier grid {self:?}")));
        }
        Ok(())
    }

    /// `fc - B/2 + (k + 1/2) B / n` for `k = 0..n`.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.subcarrier_count as f64;
        let spacing = self.bandwidth / n;
        (0..self.subcarrier_count)
            .map(|k| self.center_frequency - 0.5 * self.bandwidth + (k as f64 + 0.5) * spacing)
            .collect()
    }
}
