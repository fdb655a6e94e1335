//! The 17-joint skeleton shared by annotations, predictions and reports.

use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 17;
pub const POSE_SCALARS: usize = JOINT_COUNT * 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Joint {
    MidHip,
    LHip,
    LKnee,
    LAnkle,
    RHip,
    RKnee,
    RAnkle,
    Back,
    Neck,
    Nose,
    Head,
    LShoulder,
    LElbow,
    LWrist,
    RShoulder,
    RElbow,
    RWrist,
}

impl Joint {
    /// Report and storage order.
    pub const ALL: [Joint; JOINT_COUNT] = [
        Joint::MidHip,
        Joint::LHip,
        Joint::LKnee,
        Joint::LAnkle,
        Joint::RHip,
        Joint::RKnee,
        Joint::RAnkle,
        Joint::Back,
        Joint::Neck,
        Joint::Nose,
        Joint::Head,
        Joint::LShoulder,
        Joint::LElbow,
        Joint::LWrist,
        Joint::RShoulder,
        Joint::RElbow,
        Joint::RWrist,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::MidHip => "MidHip",
            Joint::LHip => "LHip",
            Joint::LKnee => "LKnee",
            Joint::LAnkle => "LAnkle",
            Joint::RHip => "RHip",
            Joint::RKnee => "RKnee",
            Joint::RAnkle => "RAnkle",
            Joint::Back => "Back",
            Joint::Neck => "Neck",
            Joint::Nose => "Nose",
            Joint::Head => "Head",
            Joint::LShoulder => "LShoulder",
            Joint::LElbow => "LElbow",
            Joint::LWrist => "LWrist",
            Joint::RShoulder => "RShoulder",
            Joint::RElbow => "RElbow",
            Joint::RWrist => "RWrist",
        }
    }

    /// Kinematic parent; `MidHip` is the root.
    pub fn parent(self) -> Option<Joint> {
        use Joint::*;
        Some(match self {
            MidHip => return None,
            LHip | RHip | Back => MidHip,
            LKnee => LHip,
            LAnkle => LKnee,
            RKnee => RHip,
            RAnkle => RKnee,
            Neck => Back,
            Nose | Head | LShoulder | RShoulder => Neck,
            LElbow => LShoulder,
            LWrist => LElbow,
            RElbow => RShoulder,
            RWrist => RElbow,
        })
    }
}

/// Joint positions in meters, indexed by [`Joint::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SkeletonPose {
    pub joints: [[f64; 3]; JOINT_COUNT],
}

impl SkeletonPose {
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != POSE_SCALARS {
            return Err(Error::LengthMismatch {
                what: "pose coordinates",
                left: POSE_SCALARS,
                right: values.len(),
            });
        }
        let mut pose = Self::default();
        for (j, xyz) in pose.joints.iter_mut().zip(values.chunks_exact(3)) {
            j.copy_from_slice(xyz);
        }
        Ok(pose)
    }

    pub fn to_flat(&self) -> [f64; POSE_SCALARS] {
        let mut out = [0.0; POSE_SCALARS];
        for (dst, j) in out.chunks_exact_mut(3).zip(&self.joints) {
            dst.copy_from_slice(j);
        }
        out
    }

    pub fn joint(&self, joint: Joint) -> [f64; 3] {
        self.joints[joint.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    /// Length of the bone ending at each non-root joint, in [`Joint::ALL`] order.
    pub fn bone_lengths(&self) -> [f64; JOINT_COUNT] {
        let mut out = [0.0; JOINT_COUNT];
        for joint in Joint::ALL {
            if let Some(parent) = joint.parent() {
                out[joint.index()] = distance(self.joint(joint), self.joint(parent));
            }
        }
        out
    }
}

pub(crate) fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

/// A pose annotation at a stream timestamp (seconds).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: SkeletonPose,
}
