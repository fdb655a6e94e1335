//! Pose/CSI timestamp synchronization and train/test splitting.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::RECEIVERS;

/// Largest tolerated relative deviation of a stream from its nominal rate.
pub const MAX_RATE_DRIFT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyncConfig {
    pub csi_rate: f64,
    pub pose_rate: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self { csi_rate: 150.0, pose_rate: 30.0 }
    }
}

impl SyncConfig {
    /// CSI samples per pose frame; the rates must divide evenly.
    pub fn per_pose(&self) -> Result<usize> {
        let ratio = self.csi_rate / self.pose_rate;
        let n = libm::round(ratio);
        if !(self.csi_rate > 0.0 && self.pose_rate > 0.0) || n < 1.0 || libm::fabs(ratio - n) > 1e-9 {
            return Err(Error::Unsynchronized(alloc::format!(
                "CSI rate {} Hz is not an integer multiple of pose rate {} Hz",
                self.csi_rate,
                self.pose_rate
            )));
        }
        Ok(n as usize)
    }
}

/// A pose matched to the last of its co-timed CSI samples on each receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncEntry {
    pub pose: usize,
    pub anchor: [usize; RECEIVERS],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncMap {
    pub entries: Vec<SyncEntry>,
    pub per_pose: usize,
    /// Poses with no complete co-timed CSI set.
    pub dropped: usize,
}

impl SyncMap {
    /// The co-timed CSI indices of `entry` on `receiver`.
    pub fn co_timed(&self, entry: &SyncEntry, receiver: usize) -> RangeInclusive<usize> {
        let end = entry.anchor[receiver];
        end + 1 - self.per_pose..=end
    }
}

/// Least-squares seconds-per-sample against the index, over the whole stream.
fn fitted_period(times: &[f64]) -> Option<f64> {
    let n = times.len();
    if n < 2 {
        return None;
    }
    let mean_i = (n - 1) as f64 / 2.0;
    let mean_t = times.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &t) in times.iter().enumerate() {
        let di = i as f64 - mean_i;
        sxy += di * (t - mean_t);
        sxx += di * di;
    }
    Some(sxy / sxx)
}

/// Fails when the stream runs more than 1% off `rate` and the accumulated
/// error over its span exceeds half a nominal period, which jitter alone
/// cannot produce.
fn check_rate(times: &[f64], rate: f64) -> Result<()> {
    let Some(period) = fitted_period(times) else {
        return Ok(());
    };
    let nominal = 1.0 / rate;
    let drift = period / nominal - 1.0;
    let span_error = libm::fabs(drift) * nominal * (times.len() - 1) as f64;
    if !drift.is_finite() || (libm::fabs(drift) > MAX_RATE_DRIFT && span_error > 0.5 * nominal) {
        return Err(Error::RateDrift { drift_percent: 100.0 * drift });
    }
    Ok(())
}

/// Nearest index in sorted `times` to `t`.
fn nearest(times: &[f64], t: f64) -> Option<usize> {
    let i = times.partition_point(|&x| x < t);
    let before = i.checked_sub(1);
    let after = (i < times.len()).then_some(i);
    match (before, after) {
        (Some(b), Some(a)) => Some(if t - times[b] <= times[a] - t { b } else { a }),
        (b, a) => b.or(a),
    }
}

/// Matches each pose to the CSI sample nearest its timestamp on every
/// receiver, within half a CSI period. Poses lacking a full co-timed set,
/// or whose set would overlap the previous pose's, are dropped.
pub fn synchronize(csi_times: [&[f64]; RECEIVERS], pose_times: &[f64], cfg: &SyncConfig) -> Result<SyncMap> {
    let per_pose = cfg.per_pose()?;
    for (r, times) in csi_times.iter().enumerate() {
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Unsynchronized(alloc::format!(
                "receiver {} timestamps not increasing at {}",
                r + 1,
                w[1]
            )));
        }
        check_rate(times, cfg.csi_rate)?;
    }
    if pose_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Unsynchronized("pose timestamps not increasing".into()));
    }
    check_rate(pose_times, cfg.pose_rate)?;

    let tolerance = 0.5 / cfg.csi_rate;
    let mut entries = Vec::with_capacity(pose_times.len());
    let mut next_free = [0usize; RECEIVERS];
    let mut dropped = 0;
    for (p, &t) in pose_times.iter().enumerate() {
        let mut anchor = [0usize; RECEIVERS];
        let mut ok = true;
        for r in 0..RECEIVERS {
            match nearest(csi_times[r], t) {
                Some(j) if libm::fabs(csi_times[r][j] - t) <= tolerance && j + 1 >= per_pose && j + 1 - per_pose >= next_free[r] => {
                    anchor[r] = j
                }
                _ => ok = false,
            }
        }
        if ok {
            for r in 0..RECEIVERS {
                next_free[r] = anchor[r] + 1;
            }
            entries.push(SyncEntry { pose: p, anchor });
        } else {
            dropped += 1;
        }
    }
    Ok(SyncMap { entries, per_pose, dropped })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// A seeded 75/25 split inside each subject.
    #[default]
    WithinSubject,
    /// Test on one subject, train on the rest. Defaults to the last subject id.
    CrossSubject { holdout: Option<String> },
}

pub const TRAIN_FRACTION: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits sample indices by the subject id of each sample. Both index lists
/// come back sorted.
pub fn split_dataset<S: AsRef<str>>(subjects: &[S], policy: &SplitPolicy, seed: u64) -> Result<Split> {
    if subjects.is_empty() {
        return Err(Error::Empty { what: "dataset" });
    }
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        by_subject.entry(s.as_ref()).or_default().push(i);
    }
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    match policy {
        SplitPolicy::WithinSubject => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for indices in by_subject.values() {
                let mut shuffled = indices.clone();
                shuffled.shuffle(&mut rng);
                let cut = libm::round(TRAIN_FRACTION * shuffled.len() as f64) as usize;
                split.train.extend_from_slice(&shuffled[..cut]);
                split.test.extend_from_slice(&shuffled[cut..]);
            }
        }
        SplitPolicy::CrossSubject { holdout } => {
            if by_subject.len() < 2 {
                return Err(Error::InvalidConfig(alloc::format!(
                    "cross-subject split needs at least 2 subjects, found {}",
                    by_subject.len()
                )));
            }
            let held = match holdout {
                Some(h) if by_subject.contains_key(h.as_str()) => h.as_str(),
                Some(h) => return Err(Error::InvalidConfig(alloc::format!("holdout subject {h:?} not in dataset"))),
                None => by_subject.keys().next_back().copied().unwrap_or_default(),
            };
            for (subject, indices) in &by_subject {
                if *subject == held {
                    split.test.extend_from_slice(indices);
                } else {
                    split.train.extend_from_slice(indices);
                }
            }
        }
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
