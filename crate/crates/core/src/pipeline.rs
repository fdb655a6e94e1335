//! Raw CSI streams to network images: reference antenna selection, phase
//! sanitization, static-path removal and 20-sample windowing.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::dataset::{synchronize, SyncConfig};
use crate::error::{Error, Result};
use crate::image::{CsiImage, CHANNELS, SUBCARRIERS, WINDOW};
use crate::scene::{CsiStream, RECEIVERS};
use crate::skeleton::TimedPose;
use crate::train::Sample;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// CSI samples per image; fixed by the network input.
    pub window: usize,
    /// CSI samples per pose frame.
    pub stride: usize,
    /// Sliding-mean length for static removal, in samples.
    pub static_window: usize,
    pub remove_static: bool,
    pub sanitize_phase: bool,
    /// Divide amplitudes by the median raw amplitude of the reference antenna.
    pub normalize_amplitude: bool,
    /// Keep only poses whose index is a multiple of 4 (7.5 Hz output).
    pub decimate: bool,
    pub sync: SyncConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: WINDOW,
            stride: 5,
            static_window: 150,
            remove_static: true,
            sanitize_phase: true,
            normalize_amplitude: true,
            decimate: false,
            sync: SyncConfig::default(),
        }
    }
}

pub const DECIMATION: usize = 4;

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window != WINDOW {
            return Err(Error::InvalidConfig(alloc::format!(
                "window must be {WINDOW} samples to match the network input, got {}",
                self.window
            )));
        }
        if !(self.window >= self.stride && self.stride >= 1) {
            return Err(Error::InvalidConfig(alloc::format!(
                "need window >= stride >= 1, got window {} stride {}",
                self.window,
                self.stride
            )));
        }
        if self.static_window == 0 {
            return Err(Error::InvalidConfig("static window must be at least 1".into()));
        }
        if self.sync.per_pose()? != self.stride {
            return Err(Error::InvalidConfig(alloc::format!(
                "stride {} disagrees with the {} Hz / {} Hz rate ratio",
                self.stride,
                self.sync.csi_rate,
                self.sync.pose_rate
            )));
        }
        Ok(())
    }
}

fn variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Antenna with the largest amplitude variance summed over subcarriers.
/// Ties go to the lowest index.
pub fn select_reference_antenna(stream: &CsiStream) -> Result<usize> {
    if stream.frames.is_empty() {
        return Err(Error::Empty { what: "CSI stream" });
    }
    if stream.frames.len() < 2 {
        return Err(Error::TooShort { what: "CSI stream", needed: 2, got: 1 });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for a in 0..stream.antennas {
        let total: f64 = (0..stream.subcarriers)
            .map(|k| variance(stream.frames.iter().map(|f| f.get(a, k, stream.subcarriers).norm())))
            .sum();
        if total > best.1 {
            best = (a, total);
        }
    }
    Ok(best.0)
}

/// Subtracts a centred sliding mean of `window` samples, truncated at the
/// ends of the series.
pub fn remove_static_component(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::TooShort { what: "series", needed: 2, got: series.len() });
    }
    if window == 0 {
        return Err(Error::InvalidConfig("static window must be at least 1".into()));
    }
    let n = series.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in series {
        acc += v;
        prefix.push(acc);
    }
    let half = window / 2;
    Ok(series
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let lo = i.saturating_sub(half);
            let hi = (i.saturating_sub(half) + window).min(n).max(i + 1);
            v - (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect())
}

/// [`remove_static_component`] on the real and imaginary parts.
pub fn remove_static_complex(series: &[Complex64], window: usize) -> Result<Vec<Complex64>> {
    let re: Vec<f64> = series.iter().map(|c| c.re).collect();
    let im: Vec<f64> = series.iter().map(|c| c.im).collect();
    let re = remove_static_component(&re, window)?;
    let im = remove_static_component(&im, window)?;
    Ok(re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect())
}

/// Maps to `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    x - TAU * libm::ceil((x - PI) / TAU)
}

pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut prev: Option<(f64, f64)> = None;
    for &p in phase {
        let u = match prev {
            None => p,
            Some((raw, unwrapped)) => unwrapped + wrap_phase(p - raw),
        };
        out.push(u);
        prev = Some((p, u));
    }
    out
}

/// Removes the least-squares linear trend over subcarrier index (and with it
/// the mean) from one frame's phase, then re-wraps.
pub fn sanitize_phase(phase: &[f64]) -> Vec<f64> {
    let n = phase.len();
    if n == 0 {
        return Vec::new();
    }
    let u = unwrap_phase(phase);
    let mean_k = (n - 1) as f64 / 2.0;
    let mean_p = u.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, p) in u.iter().enumerate() {
        let dk = k as f64 - mean_k;
        sxy += dk * (p - mean_p);
        sxx += dk * dk;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    u.iter()
        .enumerate()
        .map(|(k, p)| wrap_phase(p - mean_p - slope * (k as f64 - mean_k)))
        .collect()
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Amplitude and phase planes for one receiver, time-major `[t][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverFeatures {
    pub reference_antenna: usize,
    pub amplitude: Vec<[f64; SUBCARRIERS]>,
    pub phase: Vec<[f64; SUBCARRIERS]>,
}

pub fn receiver_features(stream: &CsiStream, cfg: &PipelineConfig) -> Result<ReceiverFeatures> {
    if stream.subcarriers != SUBCARRIERS {
        return Err(Error::LengthMismatch {
            what: "subcarriers per frame",
            left: SUBCARRIERS,
            right: stream.subcarriers,
        });
    }
    stream.validate()?;
    let reference = select_reference_antenna(stream)?;
    let n = stream.frames.len();

    let mut phase = Vec::with_capacity(n);
    let mut cleaned: Vec<[Complex64; SUBCARRIERS]> = Vec::with_capacity(n);
    let mut raw_amplitudes = Vec::with_capacity(n * SUBCARRIERS);
    for frame in &stream.frames {
        let h: Vec<Complex64> = (0..SUBCARRIERS).map(|k| frame.get(reference, k, SUBCARRIERS)).collect();
        let raw: Vec<f64> = h.iter().map(|c| c.arg()).collect();
        let p = if cfg.sanitize_phase { sanitize_phase(&raw) } else { raw };
        let mut c = [Complex64::new(0.0, 0.0); SUBCARRIERS];
        let mut ph = [0.0; SUBCARRIERS];
        for k in 0..SUBCARRIERS {
            raw_amplitudes.push(h[k].norm());
            c[k] = Complex64::from_polar(h[k].norm(), p[k]);
            ph[k] = p[k];
        }
        phase.push(ph);
        cleaned.push(c);
    }

    if cfg.remove_static {
        for k in 0..SUBCARRIERS {
            let series: Vec<Complex64> = cleaned.iter().map(|c| c[k]).collect();
            for (c, d) in cleaned.iter_mut().zip(remove_static_complex(&series, cfg.static_window)?) {
                c[k] = d;
            }
        }
    }

    let scale = if cfg.normalize_amplitude {
        let m = median(raw_amplitudes);
        if m > 0.0 { 1.0 / m } else { 1.0 }
    } else {
        1.0
    };
    let amplitude = cleaned
        .iter()
        .map(|c| core::array::from_fn(|k| c[k].norm() * scale))
        .collect();
    Ok(ReceiverFeatures { reference_antenna: reference, amplitude, phase })
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// Time-ordered image/pose pairs.
    pub samples: Vec<Sample>,
    pub reference_antennas: [usize; RECEIVERS],
    /// Poses with no co-timed CSI.
    pub unsynchronized: usize,
    /// Synchronized poses without a full window of history.
    pub short_history: usize,
}

/// One image per synchronized pose whose 20-sample window (its co-timed
/// samples plus the ones before) is fully inside the stream.
pub fn build_csi_images(streams: &[CsiStream; RECEIVERS], poses: &[TimedPose], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let times: [Vec<f64>; RECEIVERS] =
        core::array::from_fn(|r| streams[r].frames.iter().map(|f| f.timestamp).collect());
    let pose_times: Vec<f64> = poses.iter().map(|p| p.timestamp).collect();
    let map = synchronize([&times[0], &times[1]], &pose_times, &cfg.sync)?;

    let mut out = PipelineOutput {
        samples: Vec::new(),
        reference_antennas: [0; RECEIVERS],
        unsynchronized: map.dropped,
        short_history: 0,
    };
    let usable: Vec<_> = map
        .entries
        .iter()
        .filter(|e| {
            let full = e.anchor.iter().all(|&j| j + 1 >= cfg.window);
            if !full {
                out.short_history += 1;
            }
            full && (!cfg.decimate || e.pose % DECIMATION == 0)
        })
        .collect();
    if usable.is_empty() {
        if streams.iter().all(|s| s.frames.len() >= 2) {
            for (r, s) in streams.iter().enumerate() {
                out.reference_antennas[r] = select_reference_antenna(s)?;
            }
        }
        return Ok(out);
    }

    let features: Vec<ReceiverFeatures> =
        streams.iter().map(|s| receiver_features(s, cfg)).collect::<Result<_>>()?;
    for (r, f) in features.iter().enumerate() {
        out.reference_antennas[r] = f.reference_antenna;
    }
    for entry in usable {
        let mut image = CsiImage::zeros(poses[entry.pose].timestamp);
        let data = image.data_mut();
        for (r, f) in features.iter().enumerate() {
            let start = entry.anchor[r] + 1 - cfg.window;
            for w in 0..cfg.window {
                let (amp, ph) = (&f.amplitude[start + w], &f.phase[start + w]);
                for k in 0..SUBCARRIERS {
                    data[CsiImage::offset(k, w, 2 * r)] = amp[k];
                    data[CsiImage::offset(k, w, 2 * r + 1)] = ph[k];
                }
            }
        }
        debug_assert_eq!(CHANNELS, 2 * RECEIVERS);
        out.samples.push(Sample { image, pose: poses[entry.pose].pose });
    }
    Ok(out)
}
