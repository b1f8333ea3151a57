//! Versioned JSON checkpoint: model config and weights, optimizer state and
//! the dataset scaler.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::numcore::AdamState;

pub const CHECKPOINT_FORMAT: &str = "timeemb-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub scaler: Option<ChannelStats>,
}

impl Checkpoint {
    pub fn new(model: Model, optimizer: Option<AdamState>, scaler: Option<ChannelStats>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model,
            optimizer,
            scaler,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ck: Self = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!("not a checkpoint (format `{}`)", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.model.config.validate()?;
        let fresh = Model::new(ck.model.config.clone(), 0)?;
        let mismatch = fresh.params.len() != ck.model.params.len()
            || fresh
                .params
                .iter()
                .zip(ck.model.params.iter())
                .any(|((_, a), (_, b))| a.name != b.name || a.value.shape() != b.value.shape());
        if mismatch {
            return Err(Error::Serde("checkpoint parameters do not match its config".into()));
        }
        ck.model.params.ensure_grad_buffers();
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
