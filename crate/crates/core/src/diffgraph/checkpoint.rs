//! Flat binary container of named `f64` arrays.
//!
//! Layout: an 8-byte little-endian length `n`, then `n` bytes of JSON index,
//! then the concatenated array data as little-endian `f64`. The index is
//! `{"version": "sdc-ckpt-1", "metadata": {...}, "arrays": [{"name",
//! "shape", "offset"}]}` with `offset` counted in bytes from the start of the
//! data section.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Array;

pub const CHECKPOINT_VERSION: &str = "sdc-ckpt-1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Index {
    version: String,
    #[serde(default)]
    metadata: serde_json::Value,
    arrays: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub arrays: Vec<(String, Array)>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value, arrays: Vec<(String, Array)>) -> Self {
        Self { metadata, arrays }
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CheckpointError> {
        let mut offset = 0;
        let entries = self
            .arrays
            .iter()
            .map(|(name, a)| {
                let e = Entry { name: name.clone(), shape: a.shape().to_vec(), offset };
                offset += a.len() * 8;
                e
            })
            .collect();
        let index = Index { version: CHECKPOINT_VERSION.into(), metadata: self.metadata.clone(), arrays: entries };
        let json = serde_json::to_vec(&index).map_err(|e| CheckpointError::Format(e.to_string()))?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, a) in &self.arrays {
            let mut buf = Vec::with_capacity(a.len() * 8);
            for v in a.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len))
            .map_err(|_| CheckpointError::Format("index length overflows".into()))?;
        if len > 1 << 30 {
            return Err(CheckpointError::Format(format!("index length {len} is implausible")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let index: Index = serde_json::from_slice(&json).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if index.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {:?}", index.version)));
        }
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut arrays = Vec::with_capacity(index.arrays.len());
        for e in index.arrays {
            let n: usize = e.shape.iter().product();
            let end = e.offset + n * 8;
            if end > data.len() || e.offset % 8 != 0 {
                return Err(CheckpointError::Format(format!("array {} exceeds the data section", e.name)));
            }
            let values = data[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let a = Array::from_vec(&e.shape, values).map_err(|err| CheckpointError::Format(err.to_string()))?;
            arrays.push((e.name, a));
        }
        Ok(Self { metadata: index.metadata, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
