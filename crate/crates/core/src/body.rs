//! Articulated 17-joint body driven by forward kinematics, so bone lengths
//! stay fixed whatever the trajectory does.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::skeleton::{Joint, SkeletonPose, JOINT_COUNT};

/// Rest-pose offset of each joint from its parent for a 1.75 m body, in the
/// body frame (x forward, y left, z up).
const REST_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.10, 0.0],
    [0.0, 0.0, -0.45],
    [0.0, 0.0, -0.43],
    [0.0, -0.10, 0.0],
    [0.0, 0.0, -0.45],
    [0.0, 0.0, -0.43],
    [0.0, 0.0, 0.27],
    [0.0, 0.0, 0.25],
    [0.10, 0.0, 0.10],
    [0.0, 0.0, 0.20],
    [0.0, 0.18, -0.03],
    [0.0, 0.0, -0.29],
    [0.0, 0.0, -0.26],
    [0.0, -0.18, -0.03],
    [0.0, 0.0, -0.29],
    [0.0, 0.0, -0.26],
];

const REFERENCE_HEIGHT: f64 = 1.75;

/// Relative radar cross-section per joint; the torso reflects most.
pub const DEFAULT_REFLECTIVITY: [f64; JOINT_COUNT] = [
    1.0, 0.5, 0.4, 0.3, 0.5, 0.4, 0.3, 1.0, 0.7, 0.3, 0.5, 0.5, 0.35, 0.25, 0.5, 0.35, 0.25,
];

/// Motion parameters of a walking subject.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Gait {
    /// Centre of the elliptical walking path (x, y) in meters.
    pub center: [f64; 2],
    pub radii: [f64; 2],
    /// Seconds per lap of the ellipse.
    pub lap_period: f64,
    /// Strides per second.
    pub step_frequency: f64,
    /// Peak hip swing in radians.
    pub hip_swing: f64,
    pub knee_bend: f64,
    pub arm_swing: f64,
    /// Period of the slow raise-and-lower arm gesture, seconds.
    pub gesture_period: f64,
    pub gesture_amplitude: f64,
    pub phase: f64,
}

impl Default for Gait {
    fn default() -> Self {
        Self {
            center: [2.0, 2.0],
            radii: [0.8, 0.6],
            lap_period: 12.0,
            step_frequency: 0.9,
            hip_swing: 0.35,
            knee_bend: 0.6,
            arm_swing: 0.4,
            gesture_period: 7.0,
            gesture_amplitude: 1.2,
            phase: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trajectory {
    /// Standing still at `position` (x, y), facing `heading` radians.
    Static { position: [f64; 2], heading: f64 },
    Walk(Gait),
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory::Walk(Gait::default())
    }
}

/// Joint angles for one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Articulation {
    root: [f64; 3],
    heading: f64,
    lean: f64,
    hip: [f64; 2],
    knee: [f64; 2],
    shoulder_flex: [f64; 2],
    shoulder_abduct: [f64; 2],
    elbow: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct MovingBody {
    pub height: f64,
    pub trajectory: Trajectory,
    pub reflectivity: [f64; JOINT_COUNT],
    pub duration: f64,
}

impl MovingBody {
    pub fn new(height: f64, trajectory: Trajectory, duration: f64) -> Result<Self> {
        let body = Self {
            height,
            trajectory,
            reflectivity: DEFAULT_REFLECTIVITY,
            duration,
        };
        body.validate()?;
        Ok(body)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.height > 0.5 && self.height < 2.5) {
            return Err(Error::InvalidConfig(alloc::format!("body height {} m out of range", self.height)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("duration must be positive, got {}", self.duration)));
        }
        if self.reflectivity.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig("reflectivity must be finite and non-negative".into()));
        }
        if let Trajectory::Walk(g) = &self.trajectory {
            if !(g.lap_period > 0.0 && g.gesture_period > 0.0 && g.radii.iter().all(|r| *r >= 0.0)) {
                return Err(Error::InvalidConfig("walk periods must be positive".into()));
            }
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.height / REFERENCE_HEIGHT
    }

    /// Rest-pose bone lengths, the constant every sampled pose must keep.
    pub fn bone_lengths(&self) -> [f64; JOINT_COUNT] {
        let s = self.scale();
        let mut out = [0.0; JOINT_COUNT];
        for (o, r) in out.iter_mut().zip(REST_OFFSETS) {
            *o = s * libm::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        }
        out
    }

    fn articulation(&self, t: f64) -> Articulation {
        let s = self.scale();
        let hip_height = s * 0.88;
        match &self.trajectory {
            Trajectory::Static { position, heading } => Articulation {
                root: [position[0], position[1], hip_height],
                heading: *heading,
                ..Default::default()
            },
            Trajectory::Walk(g) => {
                let w = TAU / g.lap_period;
                let a = w * t + g.phase;
                let (sa, ca) = (libm::sin(a), libm::cos(a));
                let velocity = [-g.radii[0] * w * sa, g.radii[1] * w * ca];
                let step = TAU * g.step_frequency * t + g.phase;
                let swing = libm::sin(step);
                let gesture = 0.5 * (1.0 - libm::cos(TAU * t / g.gesture_period + g.phase));
                let other = 0.5 * (1.0 - libm::cos(TAU * t / (1.7 * g.gesture_period) + 2.0 * g.phase));
                Articulation {
                    root: [
                        g.center[0] + g.radii[0] * ca,
                        g.center[1] + g.radii[1] * sa,
                        hip_height + 0.02 * s * libm::cos(2.0 * step),
                    ],
                    heading: libm::atan2(velocity[1], velocity[0]),
                    lean: 0.08 + 0.05 * libm::sin(2.0 * step),
                    hip: [g.hip_swing * swing, -g.hip_swing * swing],
                    knee: [
                        g.knee_bend * libm::fmax(0.0, libm::sin(step + 0.5 * PI)),
                        g.knee_bend * libm::fmax(0.0, libm::sin(step - 0.5 * PI)),
                    ],
                    shoulder_flex: [
                        -g.arm_swing * swing * (1.0 - gesture),
                        g.arm_swing * swing * (1.0 - other),
                    ],
                    shoulder_abduct: [g.gesture_amplitude * gesture, g.gesture_amplitude * other],
                    elbow: [0.3 + 0.8 * gesture, 0.3 + 0.8 * other],
                }
            }
        }
    }

    /// Pose at time `t` seconds; `t` must lie in `[0, duration]`.
    pub fn pose_at(&self, t: f64) -> Result<SkeletonPose> {
        if !(t >= 0.0 && t <= self.duration) {
            return Err(Error::TimeOutOfRange { t, duration: self.duration });
        }
        let a = self.articulation(t);
        let s = self.scale();
        let y = Vector3::y_axis();
        let x = Vector3::x_axis();
        // Forward flexion swings a downward limb toward +x, which is a
        // negative rotation about +y.
        let flex = |angle: f64| Rotation3::from_axis_angle(&y, -angle);
        // Abduction lifts the arm sideways away from the body.
        let abduct = |angle: f64, side: f64| Rotation3::from_axis_angle(&x, -side * angle);

        let mut local = [Rotation3::identity(); JOINT_COUNT];
        local[Joint::MidHip.index()] = Rotation3::from_axis_angle(&Vector3::z_axis(), a.heading);
        local[Joint::LHip.index()] = flex(a.hip[0]);
        local[Joint::RHip.index()] = flex(a.hip[1]);
        // Knees bend backward.
        local[Joint::LKnee.index()] = flex(-a.knee[0]);
        local[Joint::RKnee.index()] = flex(-a.knee[1]);
        local[Joint::Back.index()] = flex(-a.lean);
        local[Joint::LShoulder.index()] = abduct(a.shoulder_abduct[0], 1.0) * flex(a.shoulder_flex[0]);
        local[Joint::RShoulder.index()] = abduct(a.shoulder_abduct[1], -1.0) * flex(a.shoulder_flex[1]);
        local[Joint::LElbow.index()] = flex(a.elbow[0]);
        local[Joint::RElbow.index()] = flex(a.elbow[1]);

        let mut world = [Rotation3::identity(); JOINT_COUNT];
        let mut pose = SkeletonPose::default();
        // Joint::ALL lists every parent before its children.
        for joint in Joint::ALL {
            let i = joint.index();
            match joint.parent() {
                None => {
                    world[i] = local[i];
                    pose.joints[i] = a.root;
                }
                Some(parent) => {
                    let p = parent.index();
                    let offset = Vector3::from(REST_OFFSETS[i]) * s;
                    let pos = Vector3::from(pose.joints[p]) + world[p] * offset;
                    pose.joints[i] = [pos.x, pos.y, pos.z];
                    world[i] = world[p] * local[i];
                }
            }
        }
        Ok(pose)
    }
}

/// Body and gait parameters of one synthetic subject.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubjectProfile {
    pub id: String,
    pub height: f64,
    pub gait: Gait,
}

impl SubjectProfile {
    /// Five subjects from 1.60 m to 1.90 m with distinct gaits.
    pub fn presets() -> Vec<SubjectProfile> {
        let heights = [1.60, 1.68, 1.75, 1.82, 1.90];
        heights
            .iter()
            .enumerate()
            .map(|(i, &height)| {
                let k = i as f64;
                SubjectProfile {
                    id: alloc::format!("S{}", i + 1),
                    height,
                    gait: Gait {
                        lap_period: 10.0 + 1.5 * k,
                        step_frequency: 0.8 + 0.06 * k,
                        hip_swing: 0.30 + 0.03 * k,
                        knee_bend: 0.5 + 0.05 * k,
                        arm_swing: 0.35 + 0.04 * k,
                        gesture_period: 6.0 + 0.8 * k,
                        gesture_amplitude: 1.0 + 0.1 * k,
                        phase: 0.9 * k,
                        ..Gait::default()
                    },
                }
            })
            .collect()
    }
}
