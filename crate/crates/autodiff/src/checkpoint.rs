//! Parameter serialisation: each tensor is stored as its shape plus the
//! base64 encoding of its little-endian `f64` bytes, which round-trips
//! bit-exactly.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl EncodedTensor {
    pub fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| AutodiffError::Checkpoint(format!("bad base64 payload: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(AutodiffError::Checkpoint("payload is not a whole number of f64".into()));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }
}

/// On-disk model checkpoint. `config` and `extra` are opaque to this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: String,
    pub config: serde_json::Value,
    pub extra: serde_json::Value,
    pub params: BTreeMap<String, EncodedTensor>,
}

impl Checkpoint {
    pub fn new(
        model_kind: impl Into<String>,
        config: serde_json::Value,
        extra: serde_json::Value,
        store: &ParamStore,
    ) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| (p.name.clone(), EncodedTensor::encode(&p.tensor)))
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_kind: model_kind.into(),
            config,
            extra,
            params,
        }
    }

    /// Overwrites every parameter of `store` from this checkpoint. The store
    /// must have been built with the same architecture.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.params.len() != store.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, enc) in &self.params {
            store.set(name, enc.decode()?)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
    }
}
