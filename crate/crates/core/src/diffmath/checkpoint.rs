//! Binary checkpoint: 8-byte magic, little-endian `u64` header length, a
//! JSON header (tensor names and shapes, dtype, step counter, free-form
//! metadata), then each tensor's raw little-endian `f64` buffer in header
//! order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{Params, Tensor};
use super::DiffError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADAGCL\x00\x01";

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    step: u64,
    tensors: Vec<TensorHeader>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub meta: serde_json::Value,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(step: u64, meta: serde_json::Value) -> Self {
        Checkpoint {
            step,
            meta,
            entries: Vec::new(),
        }
    }

    /// Appends every tensor of `params`, names prefixed by `group.`.
    pub fn push_group(&mut self, group: &str, params: &Params) {
        for (name, t) in params.iter() {
            self.entries.push((format!("{group}.{name}"), t.clone()));
        }
    }

    /// Copies the tensors of `group` back into `params`, which must already
    /// have the same names and shapes.
    pub fn restore_group(&self, group: &str, params: &mut Params) -> Result<(), DiffError> {
        let names: Vec<String> = params.names().to_vec();
        for (k, name) in names.iter().enumerate() {
            let full = format!("{group}.{name}");
            let t = self
                .entries
                .iter()
                .find(|(n, _)| *n == full)
                .map(|(_, t)| t)
                .ok_or_else(|| DiffError::Checkpoint(format!("missing tensor {full}")))?;
            let dst = &mut params.tensors_mut()[k];
            if dst.shape() != t.shape() {
                return Err(DiffError::Checkpoint(format!(
                    "{full}: shape {:?} in file, {:?} expected",
                    t.shape(),
                    dst.shape()
                )));
            }
            dst.data.copy_from_slice(&t.data);
        }
        Ok(())
    }

    pub fn has_group(&self, group: &str) -> bool {
        let prefix = format!("{group}.");
        self.entries.iter().any(|(n, _)| n.starts_with(&prefix))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DiffError> {
        let header = Header {
            dtype: "f64".into(),
            step: self.step,
            tensors: self
                .entries
                .iter()
                .map(|(name, t)| TensorHeader {
                    name: name.clone(),
                    shape: [t.rows, t.cols],
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t) in &self.entries {
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, DiffError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(DiffError::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| DiffError::Checkpoint(e.to_string()))?;
        if header.dtype != "f64" {
            return Err(DiffError::Checkpoint(format!(
                "unsupported dtype {}",
                header.dtype
            )));
        }
        let mut entries = Vec::with_capacity(header.tensors.len());
        for th in header.tensors {
            let n = th.shape[0] * th.shape[1];
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((th.name, Tensor::from_vec(th.shape[0], th.shape[1], data)));
        }
        Ok(Checkpoint {
            step: header.step,
            meta: header.meta,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffError> {
        let tmp = path.with_extension("tmp");
        {
            let f = std::fs::File::create(&tmp)?;
            let mut w = std::io::BufWriter::new(f);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DiffError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
