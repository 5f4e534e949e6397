//! Entropy diagnostics for a trained velocity model and its noise
//! generator.
//!
//! The pointwise loss `L` is read as the log-variance of a zero-mean
//! Gaussian, whose differential entropy is `½L + ½ln(2πe)`. The task
//! entropy averages this over path samples; the conditional entropy does
//! the same with generator noise added to the velocity; their difference
//! is the mutual-information gain. `exp(L)` is never formed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{NoiseGenerator, VelocityModel};
use crate::numerics::{Rng, Tensor};
use crate::training::{draw_paths, Batch, PathDraws};

/// `½ln(2πe)`, the entropy of a standard normal in nats.
pub const STANDARD_NORMAL_ENTROPY: f64 = 1.418_938_533_204_672_7;

const FEATURE_CHUNK: usize = 1024;

/// Differential entropy of `N(0, exp(l))`.
pub fn aux_entropy(l: f64) -> f64 {
    0.5 * l + STANDARD_NORMAL_ENTROPY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub entropy: f64,
    pub std_error: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub task_entropy: f64,
    pub conditional_entropy: f64,
    /// Always `task_entropy − conditional_entropy`.
    pub mi_gain: f64,
    pub sample_count: usize,
    pub noise_draws: usize,
    /// Paired standard error of `mi_gain`.
    pub std_error: f64,
    pub task_std_error: f64,
    pub conditional_std_error: f64,
    /// Losses divided by the data dimension.
    pub per_dim: bool,
}

/// Inputs available to a noise source at one batch of path samples.
pub struct NoiseInputs<'a> {
    pub features: &'a Tensor,
    pub velocity: &'a Tensor,
    pub target: &'a Tensor,
}

/// Mean taken as `v₁ + Σ(vᵢ − v₁)/n`, exact for constant inputs.
fn mean_and_se(values: &[f64]) -> EntropyEstimate {
    let n = values.len();
    let first = values[0];
    let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    EntropyEstimate {
        entropy: mean,
        std_error,
        samples: n,
    }
}

/// Mean entropy (with standard error) for a list of pointwise losses.
pub fn entropy_from_losses(losses: &[f64]) -> Result<EntropyEstimate> {
    if losses.is_empty() {
        return Err(Error::InvalidArgument("no losses".into()));
    }
    let values: Vec<f64> = losses.iter().map(|&l| aux_entropy(l)).collect();
    Ok(mean_and_se(&values))
}

/// Shared path samples for the estimators: `n` data rows with their `x0`,
/// `t` and (for conditional models) true labels.
pub fn draw_entropy_paths(model: &VelocityModel, dataset: &Dataset, n: usize, rng: &mut Rng) -> Result<PathDraws> {
    if n == 0 {
        return Err(Error::InvalidArgument("entropy estimate needs n >= 1".into()));
    }
    let batch = Batch::draw(dataset, n, rng)?;
    draw_paths(&batch, model.class_count, 0.0, None, rng)
}

/// Backbone features and velocities for every path sample.
fn features_and_velocity(model: &VelocityModel, draws: &PathDraws) -> Result<(Tensor, Tensor)> {
    let n = draws.rows();
    let d = draws.x_t.cols();
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .step_by(FEATURE_CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&s| {
            let e = (s + FEATURE_CHUNK).min(n);
            let x = Tensor::matrix(e - s, d, draws.x_t.data()[s * d..e * d].to_vec());
            let labels = if draws.labels.is_empty() { &[][..] } else { &draws.labels[s..e] };
            let f = model.backbone_features(&x, &draws.t[s..e], labels)?;
            let v = model.head_apply(&f, x.shape())?;
            Ok((f.into_data(), v.into_data()))
        })
        .collect::<Result<_>>()?;
    let (mut f, mut v) = (Vec::new(), Vec::new());
    for (a, b) in parts {
        f.extend(a);
        v.extend(b);
    }
    Ok((Tensor::matrix(n, model.feature_dim(), f), Tensor::matrix(n, d, v)))
}

fn row_losses(pred: &Tensor, target: &Tensor, per_dim: bool) -> Vec<f64> {
    let d = target.cols();
    (0..target.rows())
        .map(|i| {
            let l: f64 = pred
                .row(i)
                .iter()
                .zip(target.row(i))
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            if per_dim {
                l / d as f64
            } else {
                l
            }
        })
        .collect()
}

/// Per-row task entropies and per-row conditional entropies under `m`
/// calls of `noise`.
///
/// The per-row conditional value is `a₁ + Σ(aⱼ − a₁)/m`, which equals the
/// task value exactly whenever every noise draw is zero.
pub fn pointwise_entropies<F>(
    model: &VelocityModel,
    draws: &PathDraws,
    m: usize,
    per_dim: bool,
    mut noise: F,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&NoiseInputs<'_>) -> Result<Tensor>,
{
    if m == 0 {
        return Err(Error::InvalidArgument("conditional entropy needs m >= 1".into()));
    }
    let (features, velocity) = features_and_velocity(model, draws)?;
    let task: Vec<f64> = row_losses(&velocity, &draws.target, per_dim)
        .into_iter()
        .map(aux_entropy)
        .collect();
    let inputs = NoiseInputs {
        features: &features,
        velocity: &velocity,
        target: &draws.target,
    };
    let mut first: Vec<f64> = Vec::new();
    let mut offset = vec![0.0; task.len()];
    for j in 0..m {
        let z = noise(&inputs)?;
        let a: Vec<f64> = row_losses(&velocity.add(&z)?, &draws.target, per_dim)
            .into_iter()
            .map(aux_entropy)
            .collect();
        if j == 0 {
            first = a;
        } else {
            for ((o, a), f) in offset.iter_mut().zip(&a).zip(&first) {
                *o += a - f;
            }
        }
    }
    let cond = first
        .iter()
        .zip(&offset)
        .map(|(f, o)| f + o / m as f64)
        .collect();
    Ok((task, cond))
}

fn generator_noise<'a>(
    gen: &'a NoiseGenerator,
    model: &VelocityModel,
    rng: &'a mut Rng,
) -> Result<impl FnMut(&NoiseInputs<'_>) -> Result<Tensor> + 'a> {
    if gen.feature_dim() != model.feature_dim() || gen.data_dim() != model.data_dim {
        return Err(Error::Contract("noise generator does not fit the model".into()));
    }
    Ok(move |inp: &NoiseInputs<'_>| {
        let (params, _) = gen.forward(inp.features, inp.velocity.shape())?;
        let base = gen.family.base_tensor(inp.velocity.shape(), rng);
        params.apply(&base)
    })
}

pub fn task_entropy_mc(
    model: &VelocityModel,
    dataset: &Dataset,
    n: usize,
    per_dim: bool,
    rng: &mut Rng,
) -> Result<EntropyEstimate> {
    let draws = draw_entropy_paths(model, dataset, n, rng)?;
    let (_, velocity) = features_and_velocity(model, &draws)?;
    entropy_from_losses(&row_losses(&velocity, &draws.target, per_dim))
}

pub fn conditional_entropy_mc(
    model: &VelocityModel,
    gen: &NoiseGenerator,
    dataset: &Dataset,
    n: usize,
    m: usize,
    per_dim: bool,
    rng: &mut Rng,
) -> Result<EntropyEstimate> {
    Ok(mi_gain(model, gen, dataset, n, m, per_dim, rng)?.conditional())
}

/// Both entropies on one set of path samples, plus their difference.
pub fn mi_gain(
    model: &VelocityModel,
    gen: &NoiseGenerator,
    dataset: &Dataset,
    n: usize,
    m: usize,
    per_dim: bool,
    rng: &mut Rng,
) -> Result<EntropyReport> {
    let draws = draw_entropy_paths(model, dataset, n, rng)?;
    let (task, cond) = pointwise_entropies(model, &draws, m, per_dim, generator_noise(gen, model, rng)?)?;
    Ok(EntropyReport::from_pointwise(&task, &cond, m, per_dim))
}

impl EntropyReport {
    pub fn from_pointwise(task: &[f64], cond: &[f64], m: usize, per_dim: bool) -> Self {
        let t = mean_and_se(task);
        let c = mean_and_se(cond);
        let diff: Vec<f64> = task.iter().zip(cond).map(|(a, b)| a - b).collect();
        EntropyReport {
            task_entropy: t.entropy,
            conditional_entropy: c.entropy,
            mi_gain: t.entropy - c.entropy,
            sample_count: task.len(),
            noise_draws: m,
            std_error: mean_and_se(&diff).std_error,
            task_std_error: t.std_error,
            conditional_std_error: c.std_error,
            per_dim,
        }
    }

    pub fn task(&self) -> EntropyEstimate {
        EntropyEstimate {
            entropy: self.task_entropy,
            std_error: self.task_std_error,
            samples: self.sample_count,
        }
    }

    pub fn conditional(&self) -> EntropyEstimate {
        EntropyEstimate {
            entropy: self.conditional_entropy,
            std_error: self.conditional_std_error,
            samples: self.sample_count,
        }
    }
}
