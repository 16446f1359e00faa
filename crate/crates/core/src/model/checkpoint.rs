//! Binary checkpoint container. All integers and floats are little-endian.
//!
//! ```text
//! magic    b"MFCK"
//! version  u32
//! header   u32 length + UTF-8 JSON {model, train_config, epoch, skeleton}
//! stats    u8 flag; if 1: u32 n, n f64 means, n f64 stds
//! sets     u32 count, then per set:
//!            name (u32 length + UTF-8), u32 entry count, then per entry:
//!            name, u32 rank, rank x u64 extents, f64 values
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Generator, ModelConfig, ModelError, ParamSet, Result};
use crate::motiondata::NormalizationStats;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Training configuration in its `key = value` text form.
    pub train_config: String,
    pub epoch: u64,
    /// Skeleton spec text, when known.
    pub skeleton: Option<String>,
    pub stats: Option<NormalizationStats>,
    pub sets: Vec<(String, ParamSet)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train_config: String,
    epoch: u64,
    skeleton: Option<String>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(ModelError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| ModelError::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Checkpoint("invalid UTF-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

impl Checkpoint {
    pub fn set(&self, name: &str) -> Option<&ParamSet> {
        self.sets.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// The stored generator, checked against the stored model config.
    pub fn generator(&self) -> Result<Generator> {
        let params = self
            .set("generator")
            .ok_or_else(|| ModelError::Checkpoint("no `generator` parameter set".into()))?;
        // a throwaway initialization gives the expected layout
        let layout = Generator::new(self.model.clone(), &mut rand::rngs::mock::StepRng::new(0, 1))?;
        let expected: Vec<_> = layout.params.entries().iter().map(|e| (&e.name, &e.shape)).collect();
        let found: Vec<_> = params.entries().iter().map(|e| (&e.name, &e.shape)).collect();
        if expected != found {
            return Err(ModelError::Checkpoint(
                "generator parameters do not match the stored model config".into(),
            ));
        }
        Ok(Generator {
            config: self.model.clone(),
            params: params.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_string(&Header {
            model: self.model.clone(),
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            skeleton: self.skeleton.clone(),
        })
        .expect("header serializes");
        put_str(&mut out, &header);
        match &self.stats {
            Some(s) => {
                out.push(1);
                out.extend((s.mean.len() as u32).to_le_bytes());
                for v in s.mean.iter().chain(&s.std) {
                    out.extend(v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        out.extend((self.sets.len() as u32).to_le_bytes());
        for (name, set) in &self.sets {
            put_str(&mut out, name);
            out.extend((set.len() as u32).to_le_bytes());
            for e in set.entries() {
                put_str(&mut out, &e.name);
                out.extend((e.shape.len() as u32).to_le_bytes());
                for d in &e.shape {
                    out.extend((*d as u64).to_le_bytes());
                }
                for v in e.data.iter() {
                    out.extend(v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header: Header = serde_json::from_str(&r.string()?)
            .map_err(|e| ModelError::Checkpoint(format!("bad header: {e}")))?;
        let stats = match r.u8()? {
            0 => None,
            1 => {
                let n = r.u32()? as usize;
                let mean = r.f64s(n)?;
                let std = r.f64s(n)?;
                Some(NormalizationStats { mean, std })
            }
            f => return Err(ModelError::Checkpoint(format!("bad stats flag {f}"))),
        };
        let mut sets = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let mut set = ParamSet::new();
            for _ in 0..r.u32()? {
                let pname = r.string()?;
                let rank = r.u32()? as usize;
                let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                let n = n.ok_or_else(|| ModelError::Checkpoint("size overflow".into()))?;
                set.push(pname, shape, r.f64s(n)?);
            }
            sets.push((name, set));
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            model: header.model,
            train_config: header.train_config,
            epoch: header.epoch,
            skeleton: header.skeleton,
            stats,
            sets,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
