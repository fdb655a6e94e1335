//! Parameter checkpoints: a versioned header, JSON metadata, every named
//! parameter with its shape and little-endian values, then the optimizer.

use std::path::Path;

use csipose_core::compute::{AdamState, NdArray, ParamStore};
use csipose_core::dataset::SplitPolicy;
use csipose_core::net::{NetworkSpec, PoseNet};
use csipose_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::bytes::{read_file, write_file, Cursor, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSIPOSEK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: NetworkSpec,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub epochs_completed: usize,
    /// How the training set was carved out of its dataset, so evaluation can
    /// reproduce the held-out part.
    #[serde(default)]
    pub split: Option<SplitRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub policy: SplitPolicy,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

fn put_array(w: &mut Writer, a: &NdArray) {
    w.f64s(a.data());
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        w.u32(meta.len() as u32);
        w.bytes(&meta);
        w.u32(self.params.len() as u32);
        for (_, p) in self.params.iter() {
            w.u16(p.name.len() as u16);
            w.bytes(p.name.as_bytes());
            w.u8(p.trainable as u8);
            w.u8(p.value.shape().len() as u8);
            for &d in p.value.shape() {
                w.u64(d as u64);
            }
            put_array(&mut w, &p.value);
        }
        match &self.adam {
            None => w.u8(0),
            Some(a) => {
                w.u8(1);
                w.u64(a.step);
                for v in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
                    w.f64(v);
                }
                for (m, v) in a.first_moment.iter().zip(&a.second_moment) {
                    put_array(&mut w, m);
                    put_array(&mut w, v);
                }
            }
        }
        w.buf
    }

    pub fn decode(path: &Path, data: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(path, data);
        let version = c.header(CHECKPOINT_MAGIC, "checkpoint")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion { path: path.into(), found: version, supported: CHECKPOINT_VERSION });
        }
        let len = c.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(c.take(len)?).map_err(|e| Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("metadata: {e}"),
        })?;
        let count = c.u32()? as usize;
        let mut params = ParamStore::new();
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = c.u16()? as usize;
            let name = std::str::from_utf8(c.take(name_len)?)
                .map_err(|_| Error::invalid(path, format!("parameter name at byte {} is not UTF-8", c.offset())))?
                .to_owned();
            let trainable = c.u8()? != 0;
            let rank = c.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(c.u64()?).map_err(|_| Error::invalid(path, "dimension overflows"))?);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::invalid(path, "shape overflows"))?;
            if n.saturating_mul(8) > c.remaining() {
                return Err(c.truncated(n.saturating_mul(8)));
            }
            let mut values = Vec::with_capacity(n);
            c.f64s(&mut values, n)?;
            shapes.push(shape.clone());
            params.insert(name, NdArray::new(shape, values)?, trainable)?;
        }
        let adam = match c.u8()? {
            0 => None,
            1 => {
                let step = c.u64()?;
                let (learning_rate, beta1, beta2, epsilon) = (c.f64()?, c.f64()?, c.f64()?, c.f64()?);
                let mut first_moment = Vec::with_capacity(count);
                let mut second_moment = Vec::with_capacity(count);
                for shape in &shapes {
                    let n: usize = shape.iter().product();
                    for out in [&mut first_moment, &mut second_moment] {
                        let mut v = Vec::with_capacity(n);
                        c.f64s(&mut v, n)?;
                        out.push(NdArray::new(shape.clone(), v)?);
                    }
                }
                Some(AdamState { learning_rate, beta1, beta2, epsilon, step, first_moment, second_moment })
            }
            flag => return Err(Error::invalid(path, format!("unknown optimizer flag {flag}"))),
        };
        if !c.is_empty() {
            return Err(Error::invalid(path, format!("{} trailing bytes", c.remaining())));
        }
        Ok(Self { meta, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(path, &read_file(path)?)
    }

    /// The network the metadata describes, checked against the stored
    /// parameters.
    pub fn network(&self) -> Result<PoseNet> {
        let net = PoseNet::new(self.meta.network.clone())?;
        net.check_params(&self.params)?;
        Ok(net)
    }
}
