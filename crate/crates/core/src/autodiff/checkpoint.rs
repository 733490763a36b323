//! Tensor container on disk: a directory holding `index.json` plus one raw
//! blob per tensor.
//!
//! Blob layout: `product(shape)` IEEE-754 binary64 values, little-endian,
//! row-major, no header or padding (so the file is exactly `8 * count`
//! bytes). The index lists the tensors in order:
//!
//! ```json
//! {
//!   "format": "negres-checkpoint",
//!   "version": 1,
//!   "dtype": "f64-le",
//!   "network": { ... },
//!   "tensors": [
//!     { "name": "stem.conv.weight", "kind": "parameter", "shape": [32, 1, 15],
//!       "file": "t0000.bin", "bytes": 3840 }
//!   ]
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "negres-checkpoint";
pub const VERSION: u32 = 1;
pub const DTYPE: &str = "f64-le";
const INDEX: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Parameter,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    /// Architecture description stored alongside the weights.
    pub network: Option<serde_json::Value>,
    pub entries: Vec<CheckpointEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network: Option<serde_json::Value>,
    tensors: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    kind: EntryKind,
    shape: Vec<usize>,
    file: String,
    bytes: u64,
}

impl Checkpoint {
    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Writes the container; the directory is replaced atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Checkpoint(format!("duplicate tensor name `{}`", e.name)));
            }
            if e.shape.iter().product::<usize>() != e.values.len() {
                return Err(Error::Checkpoint(format!("tensor `{}` shape/value mismatch", e.name)));
            }
        }
        let tmp = sibling(dir, "tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let mut tensors = Vec::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            let file = format!("t{i:04}.bin");
            let mut bytes = Vec::with_capacity(e.values.len() * 8);
            for v in &e.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(tmp.join(&file), &bytes)?;
            tensors.push(IndexEntry {
                name: e.name.clone(),
                kind: e.kind,
                shape: e.shape.clone(),
                file,
                bytes: bytes.len() as u64,
            });
        }
        let index = IndexFile {
            format: FORMAT.into(),
            version: VERSION,
            dtype: DTYPE.into(),
            network: self.network.clone(),
            tensors,
        };
        fs::write(tmp.join(INDEX), serde_json::to_vec_pretty(&index)?)?;
        if dir.exists() {
            let old = sibling(dir, "old");
            if old.exists() {
                fs::remove_dir_all(&old)?;
            }
            fs::rename(dir, &old)?;
            fs::rename(&tmp, dir)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&tmp, dir)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let raw = fs::read(dir.join(INDEX))
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", dir.join(INDEX).display())))?;
        let index: IndexFile =
            serde_json::from_slice(&raw).map_err(|e| Error::Checkpoint(format!("malformed index: {e}")))?;
        if index.format != FORMAT || index.version != VERSION || index.dtype != DTYPE {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{} ({})",
                index.format, index.version, index.dtype
            )));
        }
        let mut entries = Vec::with_capacity(index.tensors.len());
        for t in index.tensors {
            let bytes = fs::read(dir.join(&t.file))?;
            let count: usize = t.shape.iter().product();
            if bytes.len() != count * 8 || bytes.len() as u64 != t.bytes {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}`: blob has {} bytes, shape {:?} needs {}",
                    t.name,
                    bytes.len(),
                    t.shape,
                    count * 8
                )));
            }
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.push(CheckpointEntry {
                name: t.name,
                kind: t.kind,
                shape: t.shape,
                values,
            });
        }
        Ok(Self {
            network: index.network,
            entries,
        })
    }
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    dir.with_file_name(format!(".{name}.{tag}-{}", std::process::id()))
}
