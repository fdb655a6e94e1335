//! Preprocessed (CsiImage, pose) pairs with the recording each came from.

use std::path::Path;

use csipose_core::image::{CsiImage, IMAGE_LEN};
use csipose_core::scene::Scenario;
use csipose_core::skeleton::{SkeletonPose, POSE_SCALARS};
use csipose_core::train::Sample;
use serde::{Deserialize, Serialize};

use crate::bytes::{read_file, write_file, Cursor, Writer};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"CSIPOSED";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSource {
    pub recording_id: String,
    pub subject: String,
    pub scenario: Scenario,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    /// Index into [`Dataset::sources`].
    pub source: usize,
    pub sample: Sample,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub sources: Vec<SampleSource>,
    pub records: Vec<DatasetRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    sources: Vec<SampleSource>,
    records: u64,
}

impl Dataset {
    pub fn push_recording(&mut self, source: SampleSource, samples: impl IntoIterator<Item = Sample>) {
        let index = self.sources.len();
        self.sources.push(source);
        self.records.extend(samples.into_iter().map(|sample| DatasetRecord { source: index, sample }));
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Subject id of every record, in record order.
    pub fn subjects(&self) -> Vec<&str> {
        self.records.iter().map(|r| self.sources[r.source].subject.as_str()).collect()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.records.iter().map(|r| &r.sample)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        let header = Header { sources: self.sources.clone(), records: self.records.len() as u64 };
        let json = serde_json::to_vec(&header).expect("header serializes");
        w.u32(json.len() as u32);
        w.bytes(&json);
        w.buf.reserve(self.records.len() * (12 + 8 * (IMAGE_LEN + POSE_SCALARS)));
        for r in &self.records {
            w.u32(r.source as u32);
            w.f64(r.sample.image.end_timestamp);
            w.f64s(r.sample.image.data());
            w.f64s(&r.sample.pose.to_flat());
        }
        w.buf
    }

    pub fn decode(path: &Path, data: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(path, data);
        let version = c.header(DATASET_MAGIC, "dataset")?;
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion { path: path.into(), found: version, supported: DATASET_VERSION });
        }
        let len = c.u32()? as usize;
        let header_offset = c.offset();
        let header: Header = serde_json::from_slice(c.take(len)?).map_err(|e| Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("header at byte {header_offset}: {e}"),
        })?;
        let count = usize::try_from(header.records).map_err(|_| Error::invalid(path, "record count overflows"))?;
        let record_bytes = 12 + 8 * (IMAGE_LEN + POSE_SCALARS);
        if c.remaining() != count.saturating_mul(record_bytes) {
            let complete = c.remaining() / record_bytes;
            if complete < count {
                // Point at the first incomplete record.
                c.take(complete * record_bytes)?;
                return Err(c.truncated(record_bytes));
            }
            return Err(Error::invalid(path, format!(
                "{} trailing bytes after {count} records",
                c.remaining() - count * record_bytes
            )));
        }
        let mut records = Vec::with_capacity(count);
        let mut buf = Vec::with_capacity(IMAGE_LEN);
        for i in 0..count {
            let source = c.u32()? as usize;
            if source >= header.sources.len() {
                return Err(Error::invalid(path, format!("record {i} names unknown source {source}")));
            }
            let end_timestamp = c.f64()?;
            buf.clear();
            c.f64s(&mut buf, IMAGE_LEN)?;
            let image = CsiImage::new(buf.clone(), end_timestamp)?;
            let mut coords = Vec::with_capacity(POSE_SCALARS);
            c.f64s(&mut coords, POSE_SCALARS)?;
            let pose = SkeletonPose::from_flat(&coords)?;
            records.push(DatasetRecord { source, sample: Sample { image, pose } });
        }
        Ok(Self { sources: header.sources, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(path, &read_file(path)?)
    }
}
