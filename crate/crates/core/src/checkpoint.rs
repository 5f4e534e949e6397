//! Versioned JSON checkpoints. Floats are stored as hex-float strings, so
//! save → load → save is byte-identical.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{NoiseGenerator, VelocityModel};
use crate::numerics::{AdamState, Rng, RngState};
use crate::training::{TrainConfig, TrainMode, TrainState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// RFC 3339, UTC. Taken from `SOURCE_DATE_EPOCH` when set.
    pub created_at: String,
    /// First 12 hex digits of the SHA-256 of the run identity.
    pub run_id: String,
    /// Run this one was fine-tuned from.
    pub parent_run_id: Option<String>,
}

impl Provenance {
    /// Identity = mode and training config.
    pub fn new(mode: TrainMode, config: &TrainConfig) -> Self {
        let echo = serde_json::to_string(config).expect("config serializes");
        Self::from_identity(&format!("{}\n{echo}", mode.name()), None)
    }

    /// Provenance for an arbitrary identity string plus parent run.
    pub fn from_identity(identity: &str, parent_run_id: Option<String>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(identity.as_bytes());
        if let Some(p) = &parent_run_id {
            hasher.update(b"\nparent=");
            hasher.update(p.as_bytes());
        }
        let run_id = hasher.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect();
        let when = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse::<i64>().ok())
            .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
            .unwrap_or_else(Utc::now);
        Self {
            created_at: when.to_rfc3339_opts(SecondsFormat::Secs, true),
            run_id,
            parent_run_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub mode: TrainMode,
    pub step: u64,
    pub model: VelocityModel,
    pub noise_generator: Option<NoiseGenerator>,
    pub adam: AdamState,
    pub rng: RngState,
    pub consecutive_aborts: u32,
    pub config_echo: TrainConfig,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, config: &TrainConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            mode: state.mode,
            step: state.step,
            model: state.model.clone(),
            noise_generator: state.noise.clone(),
            adam: state.adam.clone(),
            rng: state.rng.state(),
            consecutive_aborts: state.consecutive_aborts,
            config_echo: config.clone(),
            provenance: Provenance::new(state.mode, config),
        }
    }

    pub fn into_state(self) -> Result<TrainState> {
        self.validate()?;
        Ok(TrainState {
            mode: self.mode,
            step: self.step,
            rng: Rng::from_state(&self.rng)?,
            model: self.model,
            noise: self.noise_generator,
            adam: self.adam,
            consecutive_aborts: self.consecutive_aborts,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        match (&self.noise_generator, self.mode.has_noise()) {
            (Some(g), true) => {
                g.validate()?;
                if g.feature_dim() != self.model.feature_dim() || g.data_dim() != self.model.data_dim {
                    return Err(Error::Checkpoint("noise generator does not fit the model".into()));
                }
                Ok(())
            }
            (None, false) => Ok(()),
            (Some(_), false) => Err(Error::Checkpoint("rf checkpoint carries a noise generator".into())),
            (None, true) => Err(Error::Checkpoint(format!(
                "{} checkpoint lacks a noise generator",
                self.mode.name()
            ))),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Checkpoint("missing format_version".into()))?;
        if version > u64::from(FORMAT_VERSION) {
            return Err(Error::Checkpoint(format!(
                "format_version {version} is newer than the supported {FORMAT_VERSION}"
            )));
        }
        let ckpt: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
