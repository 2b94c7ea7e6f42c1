//! Versioned binary checkpoint format.
//!
//! Layout (little-endian integers throughout):
//!
//! ```text
//! "SCVZ" | u32 version = 1 | u64 metadata_len | metadata JSON (UTF-8)
//! then per parameter blob:
//! u32 name_len | name UTF-8 | u64 byte_len | payload (f32 LE)
//! ```
//!
//! Weights are stored as f32; training stays f64, so a round-trip perturbs
//! logits by no more than f32 round-off. The metadata embeds the full
//! prepared schema and the encoded training rows, which makes a checkpoint
//! self-contained for conditional generation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainingConfig;
use crate::dataprep::Schema;
use crate::model::{CvaeModel, ModelDims};

pub const MAGIC: &[u8; 4] = b"SCVZ";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("schema hash mismatch: checkpoint has {found}, expected {expected}")]
    SchemaMismatch { found: String, expected: String },
    #[error("truncated checkpoint while reading {0}")]
    Truncated(String),
    #[error("malformed metadata: {0}")]
    Meta(String),
    #[error("unknown parameter '{0}' in checkpoint")]
    UnknownParam(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything needed to rebuild and drive the model downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainingConfig,
    pub schema_hash: String,
    pub dims: ModelDims,
    pub final_epoch: usize,
    pub best_loss: f64,
    pub schema: Schema,
    pub train_rows: Vec<Vec<usize>>,
    pub train_labels: Vec<u8>,
}

pub fn save_checkpoint(
    model: &CvaeModel,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let meta_json =
        serde_json::to_vec(meta).map_err(|e| CheckpointError::Meta(e.to_string()))?;
    bytes.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&meta_json);
    for param in model.params.iter() {
        let name = param.name.as_bytes();
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name);
        let payload_len = param.value().len() * 4;
        bytes.extend_from_slice(&(payload_len as u64).to_le_bytes());
        for &v in param.value().data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(
    path: &Path,
    expected_schema_hash: Option<&str>,
) -> Result<(CvaeModel, CheckpointMeta), CheckpointError> {
    let bytes = std::fs::read(path)?;
    let mut cursor = Cursor::new(&bytes);

    if cursor.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = u32::from_le_bytes(cursor.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let meta_len =
        u64::from_le_bytes(cursor.take(8, "metadata length")?.try_into().expect("8 bytes"))
            as usize;
    let meta_bytes = cursor.take(meta_len, "metadata")?;
    let meta: CheckpointMeta =
        serde_json::from_slice(meta_bytes).map_err(|e| CheckpointError::Meta(e.to_string()))?;

    if meta.schema.content_hash() != meta.schema_hash {
        return Err(CheckpointError::SchemaMismatch {
            found: meta.schema.content_hash(),
            expected: meta.schema_hash.clone(),
        });
    }
    if let Some(expected) = expected_schema_hash {
        if expected != meta.schema_hash {
            return Err(CheckpointError::SchemaMismatch {
                found: meta.schema_hash.clone(),
                expected: expected.to_string(),
            });
        }
    }

    let mut model = CvaeModel::new(meta.dims.clone(), 0);
    let mut filled = 0usize;
    while !cursor.done() {
        let name_len =
            u32::from_le_bytes(cursor.take(4, "blob name length")?.try_into().expect("4 bytes"))
                as usize;
        let name = String::from_utf8(cursor.take(name_len, "blob name")?.to_vec())
            .map_err(|_| CheckpointError::Meta("blob name is not UTF-8".into()))?;
        let byte_len =
            u64::from_le_bytes(cursor.take(8, &name)?.try_into().expect("8 bytes")) as usize;
        let payload = cursor.take(byte_len, &name)?;
        let id = model
            .params
            .by_name(&name)
            .ok_or_else(|| CheckpointError::UnknownParam(name.clone()))?;
        let value = model.params.value_mut(id);
        if byte_len != value.len() * 4 {
            return Err(CheckpointError::Meta(format!(
                "blob '{}' holds {} bytes, parameter needs {}",
                name,
                byte_len,
                value.len() * 4
            )));
        }
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            value.data_mut()[i] = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
        filled += 1;
    }
    if filled != model.params.len() {
        return Err(CheckpointError::Truncated(format!(
            "{} of {} parameter blobs",
            filled,
            model.params.len()
        )));
    }
    Ok((model, meta))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}
