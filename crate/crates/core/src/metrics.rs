//! MPJPE and Procrustes-aligned P-MPJPE with per-joint reports.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::skeleton::{distance, Joint, SkeletonPose, JOINT_COUNT};

/// Similarity transform `x ↦ scale · R x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentTransform {
    pub rotation: [[f64; 3]; 3],
    pub scale: f64,
    pub translation: [f64; 3],
}

impl AlignmentTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    fn matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2])
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.matrix() * Vector3::from(p) * self.scale + Vector3::from(self.translation);
        [v.x, v.y, v.z]
    }

    pub fn apply(&self, pose: &SkeletonPose) -> SkeletonPose {
        let mut out = *pose;
        for j in &mut out.joints {
            *j = self.apply_point(*j);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AlignOptions {
    /// Fit a uniform scale; off gives a rigid alignment.
    pub scale: bool,
    /// One transform for the whole sequence instead of one per frame.
    pub per_sequence: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { scale: true, per_sequence: false }
    }
}

/// Least-squares similarity transform taking the `pred` points onto `truth`,
/// reflections excluded.
pub fn fit_similarity(pred: &[[f64; 3]], truth: &[[f64; 3]], with_scale: bool) -> Result<AlignmentTransform> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { what: "alignment points", left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(Error::Empty { what: "alignment points" });
    }
    if pred.iter().chain(truth).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("alignment points"));
    }
    let n = pred.len() as f64;
    let centroid = |pts: &[[f64; 3]]| pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n;
    let (mu_p, mu_t) = (centroid(pred), centroid(truth));

    let mut cov = Matrix3::zeros();
    let mut spread = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let dp = Vector3::from(*p) - mu_p;
        let dt = Vector3::from(*t) - mu_t;
        cov += dt * dp.transpose();
        spread += dp.norm_squared();
    }
    if !(spread > 1e-24) {
        return Err(Error::DegeneratePose { frame: 0 });
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.ok_or(Error::NonFinite("svd"))?, svd.v_t.ok_or(Error::NonFinite("svd"))?);
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
        trace / spread
    } else {
        1.0
    };
    // A negative optimal scale would mean the best fit is a point reflection;
    // collapse to the centroid instead.
    let scale = scale.max(0.0);
    let translation = mu_t - rotation * mu_p * scale;
    let mut r = [[0.0; 3]; 3];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rotation[(i, j)];
        }
    }
    Ok(AlignmentTransform { rotation: r, scale, translation: [translation.x, translation.y, translation.z] })
}

/// Aligns `pred` onto `truth` with a full similarity transform.
pub fn procrustes_align(pred: &SkeletonPose, truth: &SkeletonPose) -> Result<(AlignmentTransform, SkeletonPose)> {
    procrustes_align_with(pred, truth, AlignOptions::default())
}

pub fn procrustes_align_with(pred: &SkeletonPose, truth: &SkeletonPose, opts: AlignOptions) -> Result<(AlignmentTransform, SkeletonPose)> {
    let tf = fit_similarity(&pred.joints, &truth.joints, opts.scale)?;
    Ok((tf, tf.apply(pred)))
}

/// Sum of squared joint distances.
pub fn squared_residual(a: &SkeletonPose, b: &SkeletonPose) -> f64 {
    a.joints.iter().zip(&b.joints).map(|(x, y)| distance(*x, *y).powi(2)).sum()
}

/// Per-joint mean error in millimeters, in report order.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JointErrorReport {
    pub per_joint_mm: [f64; JOINT_COUNT],
    pub overall_mm: f64,
    pub frames: usize,
}

impl JointErrorReport {
    pub fn from_per_joint(per_joint_mm: [f64; JOINT_COUNT], frames: usize) -> Self {
        let overall_mm = per_joint_mm.iter().sum::<f64>() / JOINT_COUNT as f64;
        Self { per_joint_mm, overall_mm, frames }
    }

    /// `(name, value)` rows, 17 joints then `Overall`.
    pub fn rows(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        Joint::ALL
            .iter()
            .map(|j| (j.name(), self.per_joint_mm[j.index()]))
            .chain(core::iter::once(("Overall", self.overall_mm)))
    }
}

fn check_lengths(pred: &[SkeletonPose], truth: &[SkeletonPose]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { what: "pose sequences", left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(Error::Empty { what: "pose sequence" });
    }
    Ok(())
}

/// Unaligned mean per-joint position error.
pub fn mpjpe(pred: &[SkeletonPose], truth: &[SkeletonPose]) -> Result<JointErrorReport> {
    check_lengths(pred, truth)?;
    let mut sums = [0.0; JOINT_COUNT];
    for (p, t) in pred.iter().zip(truth) {
        for (s, (a, b)) in sums.iter_mut().zip(p.joints.iter().zip(&t.joints)) {
            *s += distance(*a, *b);
        }
    }
    let n = pred.len() as f64;
    Ok(JointErrorReport::from_per_joint(sums.map(|s| 1000.0 * s / n), pred.len()))
}

/// MPJPE after Procrustes alignment of each predicted frame to its truth.
pub fn p_mpjpe(pred: &[SkeletonPose], truth: &[SkeletonPose]) -> Result<JointErrorReport> {
    p_mpjpe_with(pred, truth, AlignOptions::default())
}

pub fn p_mpjpe_with(pred: &[SkeletonPose], truth: &[SkeletonPose], opts: AlignOptions) -> Result<JointErrorReport> {
    check_lengths(pred, truth)?;
    let aligned: Vec<SkeletonPose> = if opts.per_sequence {
        let p: Vec<[f64; 3]> = pred.iter().flat_map(|x| x.joints).collect();
        let t: Vec<[f64; 3]> = truth.iter().flat_map(|x| x.joints).collect();
        let tf = fit_similarity(&p, &t, opts.scale)?;
        pred.iter().map(|x| tf.apply(x)).collect()
    } else {
        pred.iter()
            .zip(truth)
            .enumerate()
            .map(|(frame, (p, t))| {
                procrustes_align_with(p, t, opts).map(|(_, a)| a).map_err(|e| match e {
                    Error::DegeneratePose { .. } => Error::DegeneratePose { frame },
                    other => other,
                })
            })
            .collect::<Result<_>>()?
    };
    mpjpe(&aligned, truth)
}
