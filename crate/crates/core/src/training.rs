//! Velocity regression and the two ways of training a π-noise generator:
//! jointly with the velocity network, or on top of a frozen one.
//!
//! Every step draws, in order: batch indices, `x0` (`n × d` normals), `t`
//! (`n` uniforms), label-drop uniforms (conditional models only) and, for
//! the π-noise modes, `n × d` base draws. Rows are processed in fixed
//! chunks whose losses and gradients are summed in chunk order, so results
//! do not depend on the worker count.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interpolant::lerp;
use crate::metrics::{sliced_w2, DEFAULT_PROJECTIONS};
use crate::model::{JointModel, ModelConfig, NoiseFamily, NoiseGenerator, NoiseParams, VelocityModel};
use crate::numerics::{AdamConfig, AdamState, ParamSet, Rng, Tensor};
use crate::sampling::{generate, SamplerConfig, SamplerKind};

/// Rows per deterministic reduction chunk.
pub const CHUNK_ROWS: usize = 64;

/// Consecutive non-finite steps that abort a run.
pub const MAX_CONSECUTIVE_ABORTS: u32 = 3;

const EVAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Rf,
    Joint,
    Finetune,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Rf => "rf",
            TrainMode::Joint => "joint",
            TrainMode::Finetune => "finetune",
        }
    }

    pub fn has_noise(self) -> bool {
        self != TrainMode::Rf
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(Self::Rf),
            "joint" => Ok(Self::Joint),
            "finetune" => Ok(Self::Finetune),
            other => Err(Error::InvalidArgument(format!("unknown training mode `{other}`"))),
        }
    }
}

/// Optimization and logging settings. Times are always drawn from U(0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Target step count; a resumed run continues until it is reached.
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub noise_family: NoiseFamily,
    /// Residual blocks in a newly created noise generator.
    pub extra_blocks: usize,
    pub label_drop_prob: f64,
    pub log_every: u64,
    /// 0 disables evaluation.
    pub eval_every: u64,
    pub eval_samples: usize,
    pub eval_steps: usize,
    /// Plain kind; the π-noise modes evaluate its π-noise counterpart.
    pub eval_kind: SamplerKind,
    /// Fill the `seconds` log column (makes logs run-dependent).
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            steps: 20_000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            noise_family: NoiseFamily::Gaussian,
            extra_blocks: 0,
            label_drop_prob: 0.1,
            log_every: 100,
            eval_every: 2000,
            eval_samples: 1000,
            eval_steps: 100,
            eval_kind: SamplerKind::Ode,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be > 0", self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.label_drop_prob) {
            return bad(format!("label_drop_prob {} outside [0, 1]", self.label_drop_prob));
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1".into());
        }
        if self.eval_every > 0 && (self.eval_samples == 0 || self.eval_steps == 0) {
            return bad("evaluation needs eval_samples >= 1 and eval_steps >= 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub loss: Option<f64>,
    pub eval_metric: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Emitted as `# key=value` lines before the CSV header.
    pub header: Vec<(String, String)>,
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "step,loss,eval_metric,seconds";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::new();
        for (k, v) in &self.header {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.step,
                opt(r.loss),
                opt(r.eval_metric),
                opt(r.seconds)
            ));
        }
        out
    }

    /// Last recorded evaluation metric.
    pub fn final_eval(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.eval_metric)
    }
}

/// Data points (and labels) for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub points: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn new(points: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if labels.as_ref().is_some_and(|l| l.len() != points.rows()) {
            return Err(Error::InvalidArgument("label count differs from batch size".into()));
        }
        Ok(Self { points, labels })
    }

    /// `size` rows drawn uniformly with replacement.
    pub fn draw(dataset: &Dataset, size: usize, rng: &mut Rng) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let idx: Vec<usize> = (0..size).map(|_| rng.below(dataset.len())).collect();
        let labels = dataset.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
        Self::new(dataset.points.gather_rows(&idx), labels)
    }
}

/// Path samples for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDraws {
    pub x_t: Tensor,
    pub target: Tensor,
    pub t: Vec<f64>,
    /// Empty for unconditional models; `None` entries are dropped labels.
    pub labels: Vec<Option<usize>>,
    /// Base draws for the π-noise modes.
    pub base: Option<Tensor>,
}

impl PathDraws {
    pub fn rows(&self) -> usize {
        self.t.len()
    }
}

/// Draws `x0`, `t`, label drops and (with `family`) base noise for `batch`.
pub fn draw_paths(
    batch: &Batch,
    class_count: usize,
    label_drop_prob: f64,
    family: Option<NoiseFamily>,
    rng: &mut Rng,
) -> Result<PathDraws> {
    let x_star = &batch.points;
    let (n, d) = (x_star.rows(), x_star.cols());
    let x0 = rng.sample_normal(&[n, d]);
    let t: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let mut x_t = Vec::with_capacity(n * d);
    let mut target = Vec::with_capacity(n * d);
    for i in 0..n {
        for (a, b) in x_star.row(i).iter().zip(x0.row(i)) {
            x_t.push(lerp(*a, *b, t[i]));
            target.push(a - b);
        }
    }
    let labels = if class_count > 0 {
        let given = batch
            .labels
            .as_ref()
            .ok_or_else(|| Error::Label("a conditional model needs labeled data".into()))?;
        let mut out = Vec::with_capacity(n);
        for &l in given {
            if l >= class_count {
                return Err(Error::Label(format!("label {l} outside [0, {class_count})")));
            }
            out.push(if rng.uniform() < label_drop_prob { None } else { Some(l) });
        }
        out
    } else {
        Vec::new()
    };
    let base = family.map(|f| f.base_tensor(&[n, d], rng));
    Ok(PathDraws {
        x_t: Tensor::matrix(n, d, x_t),
        target: Tensor::matrix(n, d, target),
        t,
        labels,
        base,
    })
}

fn slice_rows(t: &Tensor, r: &Range<usize>) -> Tensor {
    let d = t.cols();
    Tensor::matrix(r.len(), d, t.data()[r.start * d..r.end * d].to_vec())
}

struct ChunkView {
    x_t: Tensor,
    target: Tensor,
    t: Vec<f64>,
    labels: Vec<Option<usize>>,
    base: Option<Tensor>,
}

impl PathDraws {
    fn chunk(&self, r: &Range<usize>) -> ChunkView {
        ChunkView {
            x_t: slice_rows(&self.x_t, r),
            target: slice_rows(&self.target, r),
            t: self.t[r.clone()].to_vec(),
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                self.labels[r.clone()].to_vec()
            },
            base: self.base.as_ref().map(|b| slice_rows(b, r)),
        }
    }
}

/// Sum of squared residuals and `2·residual/n`.
fn residual(pred: &Tensor, target: &Tensor, n: usize) -> Result<(f64, Tensor)> {
    let r = pred.sub(target)?;
    let sum = r.data().iter().map(|v| v * v).sum();
    Ok((sum, r.scale(2.0 / n as f64)))
}

/// Runs `f` over fixed row chunks in parallel and sums the results in
/// chunk order. Returns the mean loss.
fn reduce_chunks<P, F>(draws: &PathDraws, zero: &P, f: F) -> Result<(f64, P)>
where
    P: ParamSet + Clone + Send + Sync,
    F: Fn(&ChunkView, &mut P) -> Result<f64> + Sync,
{
    let n = draws.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let starts: Vec<usize> = (0..n).step_by(CHUNK_ROWS).collect();
    let parts: Vec<(f64, P)> = starts
        .par_iter()
        .map(|&s| {
            let view = draws.chunk(&(s..(s + CHUNK_ROWS).min(n)));
            let mut g = zero.clone();
            let loss = f(&view, &mut g)?;
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut total = zero.clone();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.accumulate(g);
    }
    let mean = loss / n as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric(format!("non-finite batch loss {mean}")));
    }
    Ok((mean, total))
}

/// Mean velocity loss `‖v_ψ(x_t, t) − (x* − x0)‖²` without gradients.
pub fn velocity_loss(model: &VelocityModel, draws: &PathDraws) -> Result<f64> {
    let n = draws.rows();
    let starts: Vec<usize> = (0..n).step_by(CHUNK_ROWS).collect();
    let parts: Vec<f64> = starts
        .par_iter()
        .map(|&s| {
            let c = draws.chunk(&(s..(s + CHUNK_ROWS).min(n)));
            let v = model.forward_batch(&c.x_t, &c.t, &c.labels)?.0;
            Ok(residual(&v, &c.target, n)?.0)
        })
        .collect::<Result<_>>()?;
    let mean = parts.iter().sum::<f64>() / n as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric(format!("non-finite batch loss {mean}")));
    }
    Ok(mean)
}

pub fn rf_loss_grad(model: &VelocityModel, draws: &PathDraws) -> Result<(f64, VelocityModel)> {
    let n = draws.rows();
    reduce_chunks(draws, &model.zeroed(), |c, g| {
        let (v, tape) = model.forward_batch(&c.x_t, &c.t, &c.labels)?;
        let (sum, gv) = residual(&v, &c.target, n)?;
        model.backward(&tape, &gv, None, g)?;
        Ok(sum)
    })
}

fn base_of(c: &ChunkView) -> Result<&Tensor> {
    c.base
        .as_ref()
        .ok_or_else(|| Error::Contract("π-noise step needs base draws".into()))
}

/// Gradients of `⟨g, loc + scale ⊙ h⟩` routed through the generator.
fn noise_backward(
    gen: &NoiseGenerator,
    tape: &crate::model::NoiseTape,
    g: &Tensor,
    h: &Tensor,
    grads: &mut NoiseGenerator,
) -> Result<Tensor> {
    let g_scale = g.zip_map(h, |a, b| a * b)?;
    let rows = g.rows();
    let df = gen.backward(tape, g.data(), g_scale.data(), grads);
    Ok(Tensor::matrix(rows, gen.feature_dim(), df))
}

fn noisy_prediction(v: &Tensor, params: &NoiseParams, h: &Tensor) -> Result<Tensor> {
    v.add(&params.apply(h)?)
}

/// Joint loss `‖v_ψ + loc + scale ⊙ h − (x* − x0)‖²`; the trunk receives
/// gradients from both heads.
pub fn joint_loss_grad(joint: &JointModel, draws: &PathDraws) -> Result<(f64, JointModel)> {
    let n = draws.rows();
    let (vm, gen) = (&joint.velocity, &joint.noise);
    reduce_chunks(draws, &joint.zeroed(), |c, g| {
        let h = base_of(c)?;
        let (v, tape) = vm.forward_batch(&c.x_t, &c.t, &c.labels)?;
        let (params, ntape) = gen.forward(tape.features(), v.shape())?;
        let (sum, gv) = residual(&noisy_prediction(&v, &params, h)?, &c.target, n)?;
        let df = noise_backward(gen, &ntape, &gv, h, &mut g.noise)?;
        vm.backward(&tape, &gv, Some(&df), &mut g.velocity)?;
        Ok(sum)
    })
}

/// Same loss with the velocity model held fixed; gradients for the
/// generator only.
pub fn finetune_loss_grad(
    frozen: &VelocityModel,
    gen: &NoiseGenerator,
    draws: &PathDraws,
) -> Result<(f64, NoiseGenerator)> {
    let n = draws.rows();
    reduce_chunks(draws, &gen.zeroed(), |c, g| {
        let h = base_of(c)?;
        let (v, tape) = frozen.forward_batch(&c.x_t, &c.t, &c.labels)?;
        let (params, ntape) = gen.forward(tape.features(), v.shape())?;
        let (sum, gv) = residual(&noisy_prediction(&v, &params, h)?, &c.target, n)?;
        noise_backward(gen, &ntape, &gv, h, g)?;
        Ok(sum)
    })
}

/// One velocity-regression step. Returns the pre-update mean loss.
pub fn rf_batch_step(
    model: &mut VelocityModel,
    adam: &mut AdamState,
    batch: &Batch,
    label_drop_prob: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let draws = draw_paths(batch, model.class_count, label_drop_prob, None, rng)?;
    let (loss, grads) = rf_loss_grad(model, &draws)?;
    adam.step(model, &grads)?;
    Ok(loss)
}

/// One joint step over velocity network and generator.
pub fn joint_batch_step(
    joint: &mut JointModel,
    adam: &mut AdamState,
    batch: &Batch,
    label_drop_prob: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let family = Some(joint.noise.family);
    let draws = draw_paths(batch, joint.velocity.class_count, label_drop_prob, family, rng)?;
    let (loss, grads) = joint_loss_grad(joint, &draws)?;
    adam.step(joint, &grads)?;
    Ok(loss)
}

/// One generator step on top of a frozen velocity model.
pub fn finetune_batch_step(
    frozen: &VelocityModel,
    gen: &mut NoiseGenerator,
    adam: &mut AdamState,
    batch: &Batch,
    label_drop_prob: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let draws = draw_paths(batch, frozen.class_count, label_drop_prob, Some(gen.family), rng)?;
    let (loss, grads) = finetune_loss_grad(frozen, gen, &draws)?;
    adam.step(gen, &grads)?;
    Ok(loss)
}

/// Where a run starts.
#[derive(Debug, Clone)]
pub enum TrainInit {
    /// New velocity model (and generator, in joint mode).
    Fresh { model: ModelConfig, class_count: usize },
    /// Continue a checkpoint of the same mode.
    Resume(Box<Checkpoint>),
    /// Fine-tune on top of an rf checkpoint.
    Pretrained(Box<Checkpoint>),
}

/// Everything that evolves during a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub mode: TrainMode,
    pub step: u64,
    pub model: VelocityModel,
    pub noise: Option<NoiseGenerator>,
    pub adam: AdamState,
    pub rng: Rng,
    pub consecutive_aborts: u32,
}

impl TrainState {
    pub fn init(mode: TrainMode, config: &TrainConfig, data_dim: usize, init: TrainInit) -> Result<Self> {
        let gen_rng = || Rng::with_stream(config.seed, 2);
        let fresh_gen = |m: &VelocityModel| {
            NoiseGenerator::for_model(m, config.noise_family, config.extra_blocks, &mut gen_rng())
        };
        let state = match init {
            TrainInit::Resume(ckpt) => {
                if ckpt.mode != mode {
                    return Err(Error::Contract(format!(
                        "cannot resume a {} checkpoint in {} mode",
                        ckpt.mode.name(),
                        mode.name()
                    )));
                }
                ckpt.into_state()?
            }
            TrainInit::Fresh { .. } if mode == TrainMode::Finetune => {
                return Err(Error::Contract("finetune needs a pre-trained rf checkpoint".into()));
            }
            TrainInit::Fresh { model, class_count } => {
                let vm = VelocityModel::new(data_dim, class_count, &model, &mut Rng::with_stream(config.seed, 1));
                let (noise, adam) = if mode == TrainMode::Joint {
                    let joint = JointModel { noise: fresh_gen(&vm), velocity: vm.clone() };
                    let adam = AdamState::new(config.adam(), &joint);
                    (Some(joint.noise), adam)
                } else {
                    (None, AdamState::new(config.adam(), &vm))
                };
                TrainState {
                    mode,
                    step: 0,
                    model: vm,
                    noise,
                    adam,
                    rng: Rng::with_stream(config.seed, 0),
                    consecutive_aborts: 0,
                }
            }
            TrainInit::Pretrained(ckpt) => {
                if mode != TrainMode::Finetune {
                    return Err(Error::Contract(format!(
                        "a pre-trained checkpoint only seeds finetune runs, not {}",
                        mode.name()
                    )));
                }
                if ckpt.mode != TrainMode::Rf {
                    return Err(Error::Contract(format!(
                        "finetune needs an rf checkpoint, got {}",
                        ckpt.mode.name()
                    )));
                }
                let gen = fresh_gen(&ckpt.model);
                TrainState {
                    mode,
                    step: 0,
                    adam: AdamState::new(config.adam(), &gen),
                    noise: Some(gen),
                    model: ckpt.model,
                    rng: Rng::with_stream(config.seed, 0),
                    consecutive_aborts: 0,
                }
            }
        };
        if state.model.data_dim != data_dim {
            return Err(Error::Dimension(format!(
                "model expects {}-dimensional data, dataset has {data_dim}",
                state.model.data_dim
            )));
        }
        Ok(state)
    }

    fn step_once(&mut self, config: &TrainConfig, dataset: &Dataset) -> Result<f64> {
        let batch = Batch::draw(dataset, config.batch_size, &mut self.rng)?;
        let p = config.label_drop_prob;
        match self.mode {
            TrainMode::Rf => rf_batch_step(&mut self.model, &mut self.adam, &batch, p, &mut self.rng),
            TrainMode::Joint => {
                let mut joint = JointModel {
                    velocity: self.model.clone(),
                    noise: self.noise.clone().expect("joint state has a generator"),
                };
                let loss = joint_batch_step(&mut joint, &mut self.adam, &batch, p, &mut self.rng)?;
                self.model = joint.velocity;
                self.noise = Some(joint.noise);
                Ok(loss)
            }
            TrainMode::Finetune => {
                let gen = self.noise.as_mut().expect("finetune state has a generator");
                finetune_batch_step(&self.model, gen, &mut self.adam, &batch, p, &mut self.rng)
            }
        }
    }

    /// Sliced-W2 between fresh samples and `reference`.
    pub fn evaluate(&self, config: &TrainConfig, reference: &Tensor) -> Result<f64> {
        let (kind, gen) = if self.mode.has_noise() {
            (config.eval_kind.with_delta_rn(), self.noise.as_ref())
        } else {
            (config.eval_kind.without_delta_rn(), None)
        };
        let sampler = SamplerConfig {
            kind,
            steps: config.eval_steps,
            seed: config.seed ^ EVAL_SEED_SALT,
            ..SamplerConfig::default()
        };
        let (samples, _) = generate(&self.model, gen, &sampler, config.eval_samples, None, false)?;
        Ok(sliced_w2(&samples, reference, DEFAULT_PROJECTIONS, config.seed)?.value)
    }
}

/// Runs `mode` until `config.steps` and returns the final checkpoint.
///
/// Evaluation runs only when `config.eval_every > 0` and `eval_ref` is
/// given. A fresh run with evaluation logs a step-0 row.
pub fn train_loop(
    mode: TrainMode,
    config: &TrainConfig,
    dataset: &Dataset,
    init: TrainInit,
    eval_ref: Option<&Tensor>,
) -> Result<(Checkpoint, TrainLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut state = TrainState::init(mode, config, dataset.dim(), init)?;
    let log = run_steps(&mut state, config, dataset, eval_ref)?;
    Ok((Checkpoint::from_state(&state, config), log))
}

/// Advances `state` to `config.steps`, logging as configured.
pub fn run_steps(
    state: &mut TrainState,
    config: &TrainConfig,
    dataset: &Dataset,
    eval_ref: Option<&Tensor>,
) -> Result<TrainLog> {
    let started = Instant::now();
    let seconds = || config.log_wall_time.then(|| started.elapsed().as_secs_f64());
    let eval_ref = eval_ref.filter(|_| config.eval_every > 0);
    let mut log = TrainLog::default();
    if let Some(reference) = eval_ref {
        if state.step == 0 && config.steps > 0 {
            log.records.push(LogRecord {
                step: 0,
                loss: None,
                eval_metric: Some(state.evaluate(config, reference)?),
                seconds: seconds(),
            });
        }
    }
    while state.step < config.steps {
        let loss = match state.step_once(config, dataset) {
            Ok(loss) => {
                state.consecutive_aborts = 0;
                Some(loss)
            }
            Err(Error::Numeric(_)) => {
                state.consecutive_aborts += 1;
                if state.consecutive_aborts >= MAX_CONSECUTIVE_ABORTS {
                    return Err(Error::Aborted(state.consecutive_aborts));
                }
                None
            }
            Err(e) => return Err(e),
        };
        state.step += 1;
        let s = state.step;
        let log_loss = s % config.log_every == 0;
        let eval = match eval_ref {
            Some(r) if s % config.eval_every == 0 => Some(state.evaluate(config, r)?),
            _ => None,
        };
        if log_loss || eval.is_some() {
            log.records.push(LogRecord {
                step: s,
                loss: loss.filter(|_| log_loss),
                eval_metric: eval,
                seconds: seconds(),
            });
        }
    }
    Ok(log)
}
