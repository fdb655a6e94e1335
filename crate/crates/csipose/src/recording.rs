//! On-disk recordings: a TOML manifest, one binary CSI stream per receiver
//! and a JSON-lines pose stream.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use csipose_core::scene::{CsiFrame, CsiStream, Recording, SceneConfig, Scenario, RECEIVERS};
use csipose_core::skeleton::{SkeletonPose, TimedPose, POSE_SCALARS};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bytes::{read_file, write_file, Cursor, Writer};
use crate::error::{Error, Result};

pub const CSI_MAGIC: &[u8; 8] = b"CSIPOSEC";
pub const CSI_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Header plus one record per frame: a timestamp then `antennas ×
/// subcarriers` (re, im) pairs, antenna-major.
pub fn encode_csi_stream(stream: &CsiStream) -> Result<Vec<u8>> {
    stream.validate()?;
    let antennas = u16::try_from(stream.antennas).map_err(|_| Error::invalid("", "too many antennas"))?;
    let subcarriers = u16::try_from(stream.subcarriers).map_err(|_| Error::invalid("", "too many subcarriers"))?;
    let mut w = Writer::default();
    w.bytes(CSI_MAGIC);
    w.u32(CSI_VERSION);
    w.u8(stream.receiver_id);
    w.u8(0);
    w.u16(antennas);
    w.u16(subcarriers);
    w.u16(0);
    w.f64(stream.sample_rate);
    w.buf.reserve(stream.frames.len() * (8 + 16 * stream.frame_len()));
    for f in &stream.frames {
        w.f64(f.timestamp);
        for v in &f.values {
            w.f64(v.re);
            w.f64(v.im);
        }
    }
    Ok(w.buf)
}

pub fn decode_csi_stream(path: &Path, data: &[u8]) -> Result<CsiStream> {
    let mut c = Cursor::new(path, data);
    let version = c.header(CSI_MAGIC, "CSI stream")?;
    if version != CSI_VERSION {
        return Err(Error::UnsupportedVersion { path: path.into(), found: version, supported: CSI_VERSION });
    }
    let receiver_id = c.u8()?;
    c.u8()?;
    let antennas = c.u16()? as usize;
    let subcarriers = c.u16()? as usize;
    c.u16()?;
    let sample_rate = c.f64()?;
    if antennas == 0 || subcarriers == 0 || !(sample_rate > 0.0) {
        return Err(Error::invalid(path, format!(
            "invalid header: {antennas} antennas, {subcarriers} subcarriers, {sample_rate} Hz"
        )));
    }
    let mut stream = CsiStream::new(receiver_id, antennas, subcarriers, sample_rate);
    let values = antennas * subcarriers;
    let frame_bytes = 8 + 16 * values;
    stream.frames.reserve(c.remaining() / frame_bytes);
    let mut scratch = Vec::with_capacity(2 * values);
    while !c.is_empty() {
        if c.remaining() < frame_bytes {
            return Err(c.truncated(frame_bytes));
        }
        let timestamp = c.f64()?;
        scratch.clear();
        c.f64s(&mut scratch, 2 * values)?;
        if let Some(prev) = stream.frames.last() {
            if !(timestamp > prev.timestamp) {
                return Err(Error::NonMonotonic {
                    path: path.into(),
                    frame: stream.frames.len(),
                    previous: prev.timestamp,
                    timestamp,
                });
            }
        }
        let values = scratch.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        stream.frames.push(CsiFrame { timestamp, values });
    }
    Ok(stream)
}

pub fn write_csi_stream(path: &Path, stream: &CsiStream) -> Result<()> {
    write_file(path, &encode_csi_stream(stream)?)
}

pub fn read_csi_stream(path: &Path) -> Result<CsiStream> {
    decode_csi_stream(path, &read_file(path)?)
}

#[derive(Serialize, Deserialize)]
struct PoseLine {
    timestamp: f64,
    coordinates: Vec<f64>,
}

/// One JSON object per line: `{"timestamp": t, "coordinates": [51 values]}`.
pub fn encode_poses(poses: &[TimedPose]) -> String {
    let mut out = String::new();
    for p in poses {
        let line = PoseLine { timestamp: p.timestamp, coordinates: p.pose.to_flat().to_vec() };
        let json = serde_json::to_string(&line).expect("poses serialize");
        let _ = writeln!(out, "{json}");
    }
    out
}

pub fn decode_poses(path: &Path, text: &str) -> Result<Vec<TimedPose>> {
    let mut poses: Vec<TimedPose> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse { path: path.into(), line: i + 1, message };
        let rec: PoseLine = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        if rec.coordinates.len() != POSE_SCALARS {
            return Err(parse(format!("expected {POSE_SCALARS} coordinates, found {}", rec.coordinates.len())));
        }
        if !rec.timestamp.is_finite() || rec.coordinates.iter().any(|v| !v.is_finite()) {
            return Err(parse("non-finite value".into()));
        }
        if let Some(prev) = poses.last() {
            if !(rec.timestamp > prev.timestamp) {
                return Err(Error::NonMonotonic {
                    path: path.into(),
                    frame: poses.len(),
                    previous: prev.timestamp,
                    timestamp: rec.timestamp,
                });
            }
        }
        poses.push(TimedPose { timestamp: rec.timestamp, pose: SkeletonPose::from_flat(&rec.coordinates)? });
    }
    Ok(poses)
}

pub fn write_poses(path: &Path, poses: &[TimedPose]) -> Result<()> {
    write_file(path, encode_poses(poses).as_bytes())
}

pub fn read_poses(path: &Path) -> Result<Vec<TimedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_poses(path, &text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingManifest {
    pub format_version: u32,
    pub recording_id: String,
    pub subject: String,
    pub scenario: Scenario,
    pub csi_rate: f64,
    pub pose_rate: f64,
    /// Per-receiver stream files, relative to the manifest.
    pub csi_files: Vec<String>,
    pub pose_file: String,
    /// The scene the recording was synthesized from, when it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneConfig>,
}

impl RecordingManifest {
    pub fn for_scene(recording_id: impl Into<String>, scene: &SceneConfig) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            recording_id: recording_id.into(),
            subject: scene.subject.clone(),
            scenario: scene.scenario,
            csi_rate: scene.sample_rate,
            pose_rate: scene.sample_rate / csipose_core::scene::CSI_PER_POSE as f64,
            csi_files: (1..=RECEIVERS).map(|r| format!("rx{r}.csi")).collect(),
            pose_file: "poses.jsonl".into(),
            scene: Some(scene.clone()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        manifest.validate(path)?;
        Ok(manifest)
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.into(),
                found: self.format_version,
                supported: MANIFEST_VERSION,
            });
        }
        if self.csi_files.len() != RECEIVERS {
            return Err(Error::invalid(path, format!(
                "expected {RECEIVERS} CSI stream files, found {}",
                self.csi_files.len()
            )));
        }
        if !(self.csi_rate > 0.0 && self.pose_rate > 0.0) {
            return Err(Error::invalid(path, "sample rates must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(MANIFEST_FILE, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedRecording {
    pub manifest: RecordingManifest,
    pub recording: Recording,
}

/// Writes `manifest.toml` plus the files it names into `dir`.
pub fn write_recording(dir: &Path, manifest: &RecordingManifest, recording: &Recording) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    manifest.validate(&dir.join(MANIFEST_FILE))?;
    for (file, stream) in manifest.csi_files.iter().zip(&recording.streams) {
        write_csi_stream(&dir.join(file), stream)?;
    }
    write_poses(&dir.join(&manifest.pose_file), &recording.poses)?;
    write_file(&dir.join(MANIFEST_FILE), manifest.to_toml()?.as_bytes())
}

/// Reads a recording from its directory or its manifest path.
pub fn read_recording(path: &Path) -> Result<LoadedRecording> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let manifest = RecordingManifest::load(&manifest_path)?;
    let mut streams = Vec::with_capacity(RECEIVERS);
    for (r, file) in manifest.csi_files.iter().enumerate() {
        let p = dir.join(file);
        let s = read_csi_stream(&p)?;
        if s.receiver_id as usize != r + 1 {
            return Err(Error::invalid(&p, format!("expected receiver {}, header says {}", r + 1, s.receiver_id)));
        }
        if s.sample_rate != manifest.csi_rate {
            return Err(Error::invalid(&p, format!(
                "header rate {} Hz disagrees with manifest {} Hz",
                s.sample_rate, manifest.csi_rate
            )));
        }
        streams.push(s);
    }
    let poses = read_poses(&dir.join(&manifest.pose_file))?;
    let streams: [CsiStream; RECEIVERS] = streams.try_into().expect("one stream per receiver");
    Ok(LoadedRecording { manifest, recording: Recording { streams, poses } })
}
