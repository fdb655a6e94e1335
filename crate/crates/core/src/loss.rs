//! Composite regression loss: mean per-joint Euclidean distance plus the
//! mean per-joint Huber norm of coordinate residuals.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::skeleton::{SkeletonPose, JOINT_COUNT, POSE_SCALARS};

/// `Offset` is the piecewise form `0.5x²` for `|x| < δ`, `|x| - 0.5`
/// otherwise, which jumps at `δ` unless `δ = 1`. `Standard` is the
/// continuous Huber function `δ(|x| - δ/2)` in the linear region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HuberVariant {
    #[default]
    Offset,
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub huber_delta: f64,
    pub huber_variant: HuberVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            huber_delta: 0.75,
            huber_variant: HuberVariant::Offset,
        }
    }
}

pub fn huber_scalar(x: f64, delta: f64, variant: HuberVariant) -> f64 {
    let a = x.abs();
    if a < delta {
        return 0.5 * x * x;
    }
    match variant {
        HuberVariant::Offset => a - 0.5,
        HuberVariant::Standard => delta * (a - 0.5 * delta),
    }
}

pub fn huber_derivative(x: f64, delta: f64, variant: HuberVariant) -> f64 {
    if x.abs() < delta {
        return x;
    }
    let sign = if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
    match variant {
        HuberVariant::Offset => sign,
        HuberVariant::Standard => delta * sign,
    }
}

/// Elementwise mean of [`huber_scalar`].
pub fn huber_norm(x: &[f64], delta: f64, variant: HuberVariant) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Empty { what: "huber norm input" });
    }
    Ok(x.iter().map(|&v| huber_scalar(v, delta, variant)).sum::<f64>() / x.len() as f64)
}

/// The two loss terms for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub position: f64,
    pub huber: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.position + self.huber
    }
}

fn check_batch(pred: &[f64], truth: &[f64]) -> Result<usize> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "prediction/truth batch",
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() || !pred.len().is_multiple_of(POSE_SCALARS) {
        return Err(Error::TooShort {
            what: "loss batch coordinates",
            needed: POSE_SCALARS,
            got: pred.len(),
        });
    }
    Ok(pred.len() / POSE_SCALARS)
}

/// Both loss terms and the gradient of their sum with respect to `pred`,
/// for flat `[T × 51]` batches.
pub fn loss_and_gradient(pred: &[f64], truth: &[f64], config: LossConfig) -> Result<(LossParts, Vec<f64>)> {
    let frames = check_batch(pred, truth)?;
    let joints = (frames * JOINT_COUNT) as f64;
    let (delta, variant) = (config.huber_delta, config.huber_variant);
    let mut parts = LossParts::default();
    let mut grad = vec![0.0; pred.len()];
    for ((p, t), g) in pred.chunks_exact(3).zip(truth.chunks_exact(3)).zip(grad.chunks_exact_mut(3)) {
        let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
        let dist = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        parts.position += dist;
        let mut h = 0.0;
        for k in 0..3 {
            h += huber_scalar(d[k], delta, variant);
            g[k] = huber_derivative(d[k], delta, variant) / (3.0 * joints);
            if dist > 0.0 {
                g[k] += d[k] / (dist * joints);
            }
        }
        parts.huber += h / 3.0;
    }
    parts.position /= joints;
    parts.huber /= joints;
    Ok((parts, grad))
}

fn flatten(poses: &[SkeletonPose]) -> Vec<f64> {
    poses.iter().flat_map(|p| p.to_flat()).collect()
}

/// Mean over frames and joints of the joint Euclidean error.
pub fn position_loss(pred: &[SkeletonPose], truth: &[SkeletonPose]) -> Result<f64> {
    Ok(loss_and_gradient(&flatten(pred), &flatten(truth), LossConfig::default())?.0.position)
}

/// Mean over frames and joints of the Huber norm of each joint's
/// coordinate residual.
pub fn huber_loss(pred: &[SkeletonPose], truth: &[SkeletonPose], delta: f64, variant: HuberVariant) -> Result<f64> {
    let cfg = LossConfig {
        huber_delta: delta,
        huber_variant: variant,
    };
    Ok(loss_and_gradient(&flatten(pred), &flatten(truth), cfg)?.0.huber)
}

/// Unweighted sum of [`position_loss`] and [`huber_loss`].
pub fn total_loss(pred: &[SkeletonPose], truth: &[SkeletonPose], config: LossConfig) -> Result<f64> {
    Ok(loss_and_gradient(&flatten(pred), &flatten(truth), config)?.0.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const D: f64 = 0.75;

    fn pose_with(joint: usize, offset: [f64; 3]) -> SkeletonPose {
        let mut p = SkeletonPose::default();
        p.joints[joint] = offset;
        p
    }

    #[test]
    fn huber_branch_values() {
        assert_eq!(huber_scalar(0.0, D, HuberVariant::Offset), 0.0);
        assert_eq!(huber_scalar(0.5, D, HuberVariant::Offset), 0.125);
        assert_eq!(huber_scalar(2.0, D, HuberVariant::Offset), 1.5);
        assert_eq!(huber_scalar(-2.0, D, HuberVariant::Offset), 1.5);
        assert_eq!(huber_norm(&[0.5, 2.0], D, HuberVariant::Offset).unwrap(), 0.8125);
        assert_eq!(huber_norm(&[0.0; 3], D, HuberVariant::Offset).unwrap(), 0.0);
        assert!(huber_norm(&[], D, HuberVariant::Offset).is_err());
    }

    #[test]
    fn offset_variant_jump_at_delta() {
        let below = huber_scalar(libm::nextafter(D, 0.0), D, HuberVariant::Offset);
        let at = huber_scalar(D, D, HuberVariant::Offset);
        assert_eq!(0.5 * D * D - at, 0.03125);
        assert!((below - at - 0.03125).abs() < 1e-15);
        let s_below = huber_scalar(libm::nextafter(D, 0.0), D, HuberVariant::Standard);
        let s_at = huber_scalar(D, D, HuberVariant::Standard);
        assert!((s_below - s_at).abs() < 1e-15);
    }

    #[test]
    fn loss_hand_values() {
        let truth = [SkeletonPose::default()];
        assert_eq!(position_loss(&truth, &truth).unwrap(), 0.0);
        assert_eq!(total_loss(&truth, &truth, LossConfig::default()).unwrap(), 0.0);

        let pred = [pose_with(4, [3.0, 4.0, 0.0])];
        assert!((position_loss(&pred, &truth).unwrap() - 5.0 / 17.0).abs() < 1e-12);

        let pred = [pose_with(2, [0.5, 0.0, 0.0])];
        let h = huber_loss(&pred, &truth, D, HuberVariant::Offset).unwrap();
        assert!((h - (0.125 / 3.0) / 17.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_batches_rejected() {
        let a = [SkeletonPose::default(); 2];
        let b = [SkeletonPose::default(); 3];
        assert!(position_loss(&a, &b).is_err());
        assert!(position_loss(&[], &[]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pred: Vec<f64> = (0..2 * POSE_SCALARS).map(|i| libm::sin(i as f64 * 0.7) * 0.6).collect();
        let truth: Vec<f64> = (0..2 * POSE_SCALARS).map(|i| libm::cos(i as f64 * 0.3) * 0.4).collect();
        for variant in [HuberVariant::Offset, HuberVariant::Standard] {
            let cfg = LossConfig { huber_delta: D, huber_variant: variant };
            let (_, grad) = loss_and_gradient(&pred, &truth, cfg).unwrap();
            let h = 1e-7;
            for i in 0..pred.len() {
                let mut p = pred.clone();
                p[i] += h;
                let fp = loss_and_gradient(&p, &truth, cfg).unwrap().0.total();
                p[i] -= 2.0 * h;
                let fm = loss_and_gradient(&p, &truth, cfg).unwrap().0.total();
                assert!(((fp - fm) / (2.0 * h) - grad[i]).abs() < 1e-7, "coord {i}");
            }
        }
    }

    fn arb_batch() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..4).prop_flat_map(|t| {
            (
                proptest::collection::vec(-3.0f64..3.0, t * POSE_SCALARS),
                proptest::collection::vec(-3.0f64..3.0, t * POSE_SCALARS),
            )
        })
    }

    proptest! {
        #[test]
        fn total_is_sum_of_nonnegative_parts((pred, truth) in arb_batch()) {
            let (parts, _) = loss_and_gradient(&pred, &truth, LossConfig::default()).unwrap();
            prop_assert!(parts.position >= 0.0 && parts.huber >= 0.0);
            prop_assert!((parts.total() - (parts.position + parts.huber)).abs() <= 1e-12);
            prop_assert!(parts.total() >= parts.position && parts.total() >= parts.huber);
            prop_assert!(parts.total().is_finite());
        }

        #[test]
        fn position_loss_is_homogeneous((pred, truth) in arb_batch()) {
            let doubled: Vec<f64> = pred.iter().zip(&truth).map(|(p, t)| t + 2.0 * (p - t)).collect();
            let a = loss_and_gradient(&pred, &truth, LossConfig::default()).unwrap().0.position;
            let b = loss_and_gradient(&doubled, &truth, LossConfig::default()).unwrap().0.position;
            prop_assert!((b - 2.0 * a).abs() <= 1e-9 * (1.0 + a));
        }

        #[test]
        fn huber_norm_is_permutation_invariant(mut xs in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
            let a = huber_norm(&xs, D, HuberVariant::Offset).unwrap();
            xs.reverse();
            xs.rotate_left(1);
            let b = huber_norm(&xs, D, HuberVariant::Offset).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
