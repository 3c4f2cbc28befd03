//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic "BNCK" | version u32 | param count u32
//! per parameter: name len u32 | name bytes | rank u32 | dims u32 × rank | f32 × numel
//! metadata len u32 | metadata bytes (UTF-8, typically JSON)
//! ```

use std::io::{Read, Write};

use crate::{NumError, ParamStore, Result, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Parameters rounded to `f32` plus an opaque metadata string.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
    pub metadata: String,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, metadata: impl Into<String>) -> Self {
        let entries = store
            .iter()
            .map(|(_, name, t)| CheckpointEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|&x| x as f32).collect(),
            })
            .collect();
        Checkpoint { entries, metadata: metadata.into() }
    }

    /// Copies values into a store with the same names and shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.entries.len() != store.len() {
            return Err(NumError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        for e in &self.entries {
            let id = store.id(&e.name)?;
            let t = store.get_mut(id);
            if t.shape() != e.shape.as_slice() {
                return Err(NumError::Checkpoint(format!(
                    "parameter `{}` has shape {:?} in checkpoint, {:?} in model",
                    e.name,
                    e.shape,
                    t.shape()
                )));
            }
            t.data_mut().iter_mut().zip(&e.values).for_each(|(d, &v)| *d = f64::from(v));
        }
        Ok(())
    }

    /// Builds a fresh store holding exactly the checkpointed tensors.
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new(0);
        for e in &self.entries {
            let data = e.values.iter().map(|&v| f64::from(v)).collect();
            store.insert(&e.name, Tensor::new(e.shape.clone(), data)?)?;
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(e.name.as_bytes());
            buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.metadata.as_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(NumError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NumError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| NumError::Checkpoint(e.to_string()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            entries.push(CheckpointEntry { name, shape, values });
        }
        let len = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| NumError::Checkpoint(e.to_string()))?;
        if r.pos != bytes.len() {
            return Err(NumError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { entries, metadata })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NumError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(&ckpt.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
