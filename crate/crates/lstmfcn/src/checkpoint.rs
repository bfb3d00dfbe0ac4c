//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "LSTMFCN\0"
//! version  u32
//! header   u64 length, then UTF-8 JSON (config, label values, schedule)
//! tensors  u32 count, then per tensor:
//!          u32 name length, name, u32 rank, u64 per dimension,
//!          f64 payload in row-major order
//! ```

use std::fs;
use std::path::Path;

use lstmfcn_core::model::{ModelConfig, ModelParams};
use lstmfcn_core::optim::FineTuneSchedule;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LSTMFCN\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    /// Raw label of each class index.
    pub label_values: Vec<f64>,
    /// Remaining fine-tuning schedule of an interrupted run.
    pub schedule: Option<FineTuneSchedule>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, label_values: Vec<f64>, params: ModelParams) -> Self {
        Self { header: Header { config, label_values, schedule: None }, params }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.header.config
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Mismatch(format!("checkpoint header: {e}")))?;
        let entries = self.params.entries();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for e in entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.tensor.shape().len() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses and validates a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::checkpoint(path, "not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::checkpoint(path, format!("unsupported format version {version}, expected {VERSION}")));
        }
        let header_len = r.u64()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::checkpoint(path, format!("header: {e}")))?;
        header.config.validate().map_err(|e| Error::checkpoint(path, format!("header: {e}")))?;
        if header.label_values.len() != header.config.num_classes {
            return Err(Error::checkpoint(
                path,
                format!("{} label values for {} classes", header.label_values.len(), header.config.num_classes),
            ));
        }
        let mut params = ModelParams::zeros(&header.config);
        let mut entries = params.entries_mut();
        let count = r.u32()? as usize;
        if count != entries.len() {
            return Err(Error::checkpoint(path, format!("{count} tensors, the configuration needs {}", entries.len())));
        }
        for entry in entries.iter_mut() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::checkpoint(path, "tensor name is not UTF-8"))?;
            if name != entry.name {
                return Err(Error::checkpoint(path, format!("expected tensor {}, found {name}", entry.name)));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != entry.tensor.shape() {
                return Err(Error::checkpoint(path, format!("tensor {name} has shape {shape:?}, expected {:?}", entry.tensor.shape())));
            }
            for v in entry.tensor.data_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("eight bytes"));
            }
        }
        drop(entries);
        if r.pos != bytes.len() {
            return Err(Error::checkpoint(path, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::checkpoint(self.path, format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}
