//! Versioned on-disk checkpoints.
//!
//! A checkpoint is a directory keyed by the run's config hash: model weights
//! and optimizer moments as safetensors, plus a JSON meta record carrying the
//! format version, the hash, and the resume cursor. Loads refuse mismatched
//! versions or hashes, so an architecture change can never silently pick up
//! stale weights.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::Device;
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::Adam;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config_hash: String,
    /// Next epoch to run (everything before it is complete).
    pub epoch: u64,
    /// Global steps completed.
    pub step: u64,
    /// Adam's bias-correction counter.
    pub adam_t: u64,
    /// Per-epoch mean training loss so far.
    pub epoch_losses: Vec<f64>,
}

/// Hash of any serializable config; directory key for its checkpoints.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let json = serde_json::to_vec(cfg)?;
    let mut h = Sha256::new();
    h.update(&json);
    Ok(format!("{:x}", h.finalize())[..16].to_string())
}

pub struct CheckpointStore {
    dir: PathBuf,
}

impl CheckpointStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn slot(&self, hash: &str) -> PathBuf {
        self.dir.join(hash)
    }

    pub fn exists(&self, hash: &str) -> bool {
        self.slot(hash).join("meta.json").is_file()
    }

    pub fn save(
        &self,
        hash: &str,
        varmap: &VarMap,
        optim: &Adam,
        epoch: u64,
        step: u64,
        epoch_losses: &[f64],
    ) -> Result<()> {
        let slot = self.slot(hash);
        std::fs::create_dir_all(&slot)?;
        varmap.save(slot.join("model.safetensors"))?;
        candle_core::safetensors::save(&optim.state(), slot.join("optim.safetensors"))?;
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            config_hash: hash.to_string(),
            epoch,
            step,
            adam_t: optim.t(),
            epoch_losses: epoch_losses.to_vec(),
        };
        // meta.json last: its presence marks the checkpoint complete
        let tmp = slot.join("meta.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&meta)?)?;
        std::fs::rename(tmp, slot.join("meta.json"))?;
        Ok(())
    }

    pub fn meta(&self, hash: &str) -> Result<CheckpointMeta> {
        let path = self.slot(hash).join("meta.json");
        let raw = std::fs::read(&path).map_err(|e| {
            Error::Checkpoint(format!("no checkpoint at {}: {e}", path.display()))
        })?;
        let meta: CheckpointMeta = serde_json::from_slice(&raw)?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                meta.version
            )));
        }
        if meta.config_hash != hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint hash {} does not match requested {hash}",
                meta.config_hash
            )));
        }
        Ok(meta)
    }

    /// Restore weights into an already-built varmap; shape mismatches surface
    /// as explicit checkpoint errors.
    pub fn load_weights(&self, hash: &str, varmap: &mut VarMap) -> Result<CheckpointMeta> {
        let meta = self.meta(hash)?;
        varmap
            .load(self.slot(hash).join("model.safetensors"))
            .map_err(|e| Error::Checkpoint(format!("weights do not fit this architecture: {e}")))?;
        Ok(meta)
    }

    pub fn load_optim(&self, hash: &str, optim: &mut Adam, dev: &Device) -> Result<()> {
        let meta = self.meta(hash)?;
        let state: HashMap<String, candle_core::Tensor> =
            candle_core::safetensors::load(self.slot(hash).join("optim.safetensors"), dev)?;
        optim.load_state(&state, meta.adam_t)
    }
}

/// Default checkpoint root under the run output directory.
pub fn default_store(out_dir: &Path) -> CheckpointStore {
    CheckpointStore::new(out_dir.join("ckpt"))
}
