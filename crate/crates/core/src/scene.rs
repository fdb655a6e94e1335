//! Scene description and CSI synthesis: one transmitter, two receivers with
//! three antennas each, static clutter and a moving body.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::body::{MovingBody, SubjectProfile, Trajectory};
use crate::channel::{decompose_response, PathComponent, PathKind, SubcarrierGrid, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::skeleton::{distance, TimedPose};

pub const RECEIVERS: usize = 2;
pub const ANTENNAS: usize = 3;
/// CSI samples per pose frame.
pub const CSI_PER_POSE: usize = 5;
pub const DEFAULT_SAMPLE_RATE: f64 = 150.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    #[default]
    Basic,
    /// A screen between the subject and receiver 1 attenuates its body paths.
    Occluded,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Basic => "basic",
            Scenario::Occluded => "occluded",
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReceiverGeometry {
    pub position: [f64; 3],
    /// Per-antenna displacement from `position`.
    pub antenna_offsets: [[f64; 3]; ANTENNAS],
}

impl ReceiverGeometry {
    pub fn antenna_position(&self, antenna: usize) -> [f64; 3] {
        let o = self.antenna_offsets[antenna];
        [self.position[0] + o[0], self.position[1] + o[1], self.position[2] + o[2]]
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub transmitter: [f64; 3],
    pub receivers: [ReceiverGeometry; RECEIVERS],
}

impl Default for Geometry {
    /// Links along +x and +y from a shared transmitter, so the two link axes
    /// are perpendicular.
    fn default() -> Self {
        Self {
            transmitter: [0.0, 0.0, 1.0],
            receivers: [
                ReceiverGeometry {
                    position: [4.0, 0.0, 1.0],
                    antenna_offsets: [[0.0, -0.03, 0.0], [0.0, 0.0, 0.01], [0.0, 0.035, 0.0]],
                },
                ReceiverGeometry {
                    position: [0.0, 4.0, 1.0],
                    antenna_offsets: [[-0.03, 0.0, 0.0], [0.0, 0.0, 0.01], [0.035, 0.0, 0.0]],
                },
            ],
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        let finite = |p: &[f64; 3]| p.iter().all(|v| v.is_finite());
        let ok = finite(&self.transmitter)
            && self
                .receivers
                .iter()
                .all(|r| finite(&r.position) && r.antenna_offsets.iter().all(finite));
        if !ok {
            return Err(Error::InvalidConfig("geometry coordinates must be finite".into()));
        }
        for r in &self.receivers {
            for a in 0..ANTENNAS {
                if distance(self.transmitter, r.antenna_position(a)) == 0.0 {
                    return Err(Error::InvalidConfig("receiver antenna coincides with transmitter".into()));
                }
            }
        }
        Ok(())
    }
}

/// A fixed point scatterer contributing one static path.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Reflector {
    pub position: [f64; 3],
    pub reflectivity: f64,
}

pub fn default_clutter() -> Vec<Reflector> {
    [
        ([5.0, 2.0, 1.2], 0.6),
        ([2.0, 5.0, 1.0], 0.5),
        ([-1.0, 3.0, 1.5], 0.4),
        ([3.0, -1.0, 0.5], 0.3),
        ([4.5, 4.5, 2.5], 0.5),
    ]
    .into_iter()
    .map(|(position, reflectivity)| Reflector { position, reflectivity })
    .collect()
}

/// Random per-frame timing and frequency offset, `exp(j (a + b k))` on
/// subcarrier `k`, shared by all antennas of a receiver.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhaseOffset {
    /// Largest slope magnitude, radians per subcarrier.
    pub max_slope: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BodyConfig {
    pub height: f64,
    pub trajectory: Trajectory,
    /// Multiplies every joint's reflectivity.
    pub reflectivity_scale: f64,
}

impl Default for BodyConfig {
    fn default() -> Self {
        Self {
            height: 1.75,
            trajectory: Trajectory::default(),
            reflectivity_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub subject: String,
    pub scenario: Scenario,
    pub geometry: Geometry,
    pub grid: SubcarrierGrid,
    pub body: BodyConfig,
    pub clutter: Vec<Reflector>,
    pub sample_rate: f64,
    pub duration: f64,
    /// Total standard deviation of the complex receiver noise.
    pub noise_std: f64,
    pub phase_offset: Option<PhaseOffset>,
    /// Amplitude factor on receiver 1 body paths in the occluded scenario.
    pub occlusion_attenuation: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            subject: "S1".into(),
            scenario: Scenario::Basic,
            geometry: Geometry::default(),
            grid: SubcarrierGrid::default(),
            body: BodyConfig::default(),
            clutter: default_clutter(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration: 1.0,
            noise_std: 1e-3,
            phase_offset: None,
            occlusion_attenuation: 0.35,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn for_subject(profile: &SubjectProfile, scenario: Scenario, duration: f64, seed: u64) -> Self {
        Self {
            subject: profile.id.clone(),
            scenario,
            body: BodyConfig {
                height: profile.height,
                trajectory: Trajectory::Walk(profile.gait.clone()),
                reflectivity_scale: 1.0,
            },
            duration,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("duration must be positive, got {}", self.duration)));
        }
        if self.csi_count() == 0 {
            return Err(Error::InvalidConfig("duration shorter than one CSI sample".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("noise level must be finite and non-negative".into()));
        }
        if !(self.occlusion_attenuation >= 0.0 && self.body.reflectivity_scale >= 0.0) {
            return Err(Error::InvalidConfig("attenuation factors must be non-negative".into()));
        }
        if self.clutter.iter().any(|c| !(c.reflectivity >= 0.0) || c.position.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidConfig("clutter reflectors must be finite and non-negative".into()));
        }
        self.grid.validate()?;
        self.geometry.validate()?;
        self.body()?;
        Ok(())
    }

    pub fn csi_count(&self) -> usize {
        libm::round(self.duration * self.sample_rate) as usize
    }

    pub fn body(&self) -> Result<MovingBody> {
        let mut body = MovingBody::new(self.body.height, self.body.trajectory.clone(), self.duration)?;
        for r in &mut body.reflectivity {
            *r *= self.body.reflectivity_scale;
        }
        Ok(body)
    }

    /// Every path reaching `antenna` of `receiver` at time `t`.
    pub fn link_paths(&self, body: &MovingBody, receiver: usize, antenna: usize, t: f64) -> Result<Vec<PathComponent>> {
        let rx = self.geometry.receivers[receiver].antenna_position(antenna);
        let tx = self.geometry.transmitter;
        let mut paths = static_paths(tx, rx, &self.clutter);
        let mut dynamic = body_to_paths(body, tx, rx, t)?;
        if self.scenario == Scenario::Occluded && receiver == 0 {
            for p in &mut dynamic {
                p.attenuation *= self.occlusion_attenuation;
            }
        }
        paths.extend(dynamic);
        Ok(paths)
    }
}

/// Line of sight plus one bounce per clutter reflector.
pub fn static_paths(tx: [f64; 3], rx: [f64; 3], clutter: &[Reflector]) -> Vec<PathComponent> {
    let los = distance(tx, rx);
    let mut paths = Vec::with_capacity(clutter.len() + 1);
    paths.push(PathComponent {
        attenuation: Complex64::new(1.0 / los, 0.0),
        delay: los / SPEED_OF_LIGHT,
        kind: PathKind::Static,
    });
    for c in clutter {
        paths.push(bounce(tx, rx, c.position, c.reflectivity, PathKind::Static));
    }
    paths
}

fn bounce(tx: [f64; 3], rx: [f64; 3], at: [f64; 3], reflectivity: f64, kind: PathKind) -> PathComponent {
    let (a, b) = (distance(tx, at), distance(at, rx));
    PathComponent {
        attenuation: Complex64::new(reflectivity / (a * b), 0.0),
        delay: (a + b) / SPEED_OF_LIGHT,
        kind,
    }
}

/// One dynamic path per joint for the link `tx → joint → rx` at time `t`.
pub fn body_to_paths(body: &MovingBody, tx: [f64; 3], rx: [f64; 3], t: f64) -> Result<Vec<PathComponent>> {
    let pose = body.pose_at(t)?;
    Ok(pose
        .joints
        .iter()
        .zip(body.reflectivity)
        .map(|(&joint, r)| bounce(tx, rx, joint, r, PathKind::Dynamic))
        .collect())
}

/// CSI of one receiver at one instant, antenna-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiFrame {
    pub timestamp: f64,
    pub values: Vec<Complex64>,
}

impl CsiFrame {
    pub fn get(&self, antenna: usize, subcarrier: usize, subcarriers: usize) -> Complex64 {
        self.values[antenna * subcarriers + subcarrier]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsiStream {
    pub receiver_id: u8,
    pub antennas: usize,
    pub subcarriers: usize,
    pub sample_rate: f64,
    pub frames: Vec<CsiFrame>,
}

impl CsiStream {
    pub fn new(receiver_id: u8, antennas: usize, subcarriers: usize, sample_rate: f64) -> Self {
        Self {
            receiver_id,
            antennas,
            subcarriers,
            sample_rate,
            frames: Vec::new(),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.antennas * self.subcarriers
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.subcarriers == 0 {
            return Err(Error::InvalidConfig("stream needs at least one antenna and subcarrier".into()));
        }
        for f in &self.frames {
            if f.values.len() != self.frame_len() {
                return Err(Error::LengthMismatch {
                    what: "CSI frame values",
                    left: self.frame_len(),
                    right: f.values.len(),
                });
            }
        }
        if let Some(w) = self.frames.windows(2).find(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::Unsynchronized(alloc::format!(
                "timestamps not increasing: {} then {}",
                w[0].timestamp,
                w[1].timestamp
            )));
        }
        Ok(())
    }

    /// Time series of one antenna/subcarrier cell.
    pub fn series(&self, antenna: usize, subcarrier: usize) -> Vec<Complex64> {
        self.frames.iter().map(|f| f.get(antenna, subcarrier, self.subcarriers)).collect()
    }
}

/// Synthesized CSI for both receivers plus the 30 Hz ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub streams: [CsiStream; RECEIVERS],
    pub poses: Vec<TimedPose>,
}

/// Timestamp of CSI sample `index`.
pub fn csi_timestamp(index: usize, sample_rate: f64) -> f64 {
    index as f64 / sample_rate
}

/// CSI index a pose frame is anchored to: the last of its five co-timed samples.
pub fn pose_anchor(pose_index: usize) -> usize {
    CSI_PER_POSE * pose_index + CSI_PER_POSE - 1
}

pub fn synthesize_recording(scene: &SceneConfig) -> Result<Recording> {
    scene.validate()?;
    let body = scene.body()?;
    let freqs = scene.grid.frequencies();
    let sc = freqs.len();
    let n = scene.csi_count();
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let noise_scale = scene.noise_std * FRAC_1_SQRT_2;

    let mut streams: [CsiStream; RECEIVERS] =
        core::array::from_fn(|r| CsiStream::new(r as u8 + 1, ANTENNAS, sc, scene.sample_rate));
    for s in &mut streams {
        s.frames.reserve(n);
    }
    for i in 0..n {
        let t = csi_timestamp(i, scene.sample_rate);
        for (r, stream) in streams.iter_mut().enumerate() {
            let offset = scene.phase_offset.as_ref().map(|po| {
                let a = rng.random_range(-PI..PI);
                let b = if po.max_slope > 0.0 { rng.random_range(-po.max_slope..po.max_slope) } else { 0.0 };
                (a, b)
            });
            let mut values = Vec::with_capacity(ANTENNAS * sc);
            for a in 0..ANTENNAS {
                let paths = scene.link_paths(&body, r, a, t)?;
                for (k, &f) in freqs.iter().enumerate() {
                    let (s, d) = decompose_response(&paths, f);
                    let mut h = s + d;
                    if noise_scale > 0.0 {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        h += Complex64::new(re, im) * noise_scale;
                    }
                    if let Some((a0, b)) = offset {
                        h *= Complex64::from_polar(1.0, a0 + b * k as f64);
                    }
                    values.push(h);
                }
            }
            stream.frames.push(CsiFrame { timestamp: t, values });
        }
    }

    let poses = (0..n / CSI_PER_POSE)
        .map(|k| {
            let t = csi_timestamp(pose_anchor(k), scene.sample_rate);
            Ok(TimedPose { timestamp: t, pose: body.pose_at(t)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Recording { streams, poses })
}
