//! Run configuration and dataset sources.

use std::path::{Path, PathBuf};

use rnoise::data::{make_dataset, Dataset, DatasetKind, DatasetSpec};
use rnoise::model::ModelConfig;
use rnoise::numerics::Tensor;
use rnoise::sampling::SamplerConfig;
use rnoise::training::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{CliError, CliResult};

/// Step count a fine-tune run uses when the config does not set one.
pub const FINETUNE_DEFAULT_STEPS: u64 = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeldOut {
    pub n: usize,
    /// `None` means `dataset.seed + 1`.
    pub seed: Option<u64>,
}

impl Default for HeldOut {
    fn default() -> Self {
        Self { n: 5000, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub held_out: HeldOut,
    /// Train a class-conditional model on the dataset labels.
    pub conditional: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Rf,
            output_dir: PathBuf::from("runs"),
            dataset: DatasetSpec::default(),
            held_out: HeldOut::default(),
            conditional: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file; also reports whether `train.steps` was given.
    pub fn load(path: Option<&Path>) -> CliResult<(Self, bool)> {
        let Some(path) = path else {
            return Ok((Self::default(), false));
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        let has_steps = value.pointer("/train/steps").is_some();
        let cfg = serde_json::from_value(value)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        Ok((cfg, has_steps))
    }

    pub fn held_out_spec(&self) -> DatasetSpec {
        DatasetSpec {
            n: self.held_out.n,
            seed: self.held_out.seed.unwrap_or(self.dataset.seed.wrapping_add(1)),
            ..self.dataset.clone()
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Parses `kind[:key=value,...]`, e.g. `gaussian_ring:n=5000,seed=1`.
pub fn parse_spec_string(text: &str, base: &DatasetSpec) -> CliResult<DatasetSpec> {
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let kind: DatasetKind = kind.trim().parse().map_err(|e: rnoise::Error| CliError::config(e.to_string()))?;
    let mut spec = DatasetSpec { kind, ..base.clone() };
    for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("dataset option `{pair}` is not key=value")))?;
        let bad = |_| CliError::config(format!("bad value `{v}` for dataset option `{k}`"));
        let v = v.trim();
        match k.trim() {
            "n" => spec.n = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "seed" => spec.seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "components" | "k" => {
                spec.components = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
            }
            "cells" => spec.cells = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "radius" => spec.radius = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "std" => spec.std = Some(v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?),
            "extent" => spec.extent = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            other => return Err(CliError::config(format!("unknown dataset option `{other}`"))),
        }
    }
    Ok(spec)
}

/// A dataset given as a spec string, a JSON spec file, or a points CSV.
pub fn load_dataset(source: &str, base: &DatasetSpec) -> CliResult<Dataset> {
    let path = Path::new(source);
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "csv" => {
            let (points, labels) = csvio::read_points(path)?;
            if points.rows() == 0 {
                return Err(CliError::config(format!("{source} holds no points")));
            }
            Ok(Dataset::from_points(points, labels)?)
        }
        "json" => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::missing(format!("cannot read {source}: {e}")))?;
            let spec: DatasetSpec =
                serde_json::from_str(&text).map_err(|e| CliError::config(format!("{source}: {e}")))?;
            Ok(make_dataset(&spec)?)
        }
        _ => Ok(make_dataset(&parse_spec_string(source, base)?)?),
    }
}

/// Points of a dataset source (labels dropped).
pub fn load_points(source: &str, base: &DatasetSpec) -> CliResult<Tensor> {
    Ok(load_dataset(source, base)?.points)
}
