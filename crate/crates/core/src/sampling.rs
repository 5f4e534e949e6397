//! Generation by Euler integration of the probability-flow ODE or
//! Euler–Maruyama integration of the reverse-time SDE, optionally with
//! π-noise added to the velocity at every step.
//!
//! Time runs forward from noise (t = 0) to data (t = 1). In this direction
//! the SDE update is
//!
//! ```text
//! x' = x + [v + (w_t/2)·s]·dt + √(w_t·dt)·ξ
//! ```
//!
//! with the score `s` recovered from the velocity. The grid is uniform on
//! `[t_min, t_max]` and every run ends with one deterministic Euler step on
//! `[t_max, 1]`.
//!
//! Trajectory `i` draws its initial state and Wiener increments from
//! `Rng::with_stream(seed, 2i)` and its π-noise base draws from
//! `Rng::with_stream(seed, 2i + 1)`, so samples do not depend on how
//! trajectories are batched or how many workers run them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolant::{velocity_to_score, TimeWindow};
use crate::model::{NoiseGenerator, NoiseParams, VelocityModel};
use crate::numerics::{Rng, Tensor};

/// Trajectories integrated together in one batched model call.
pub const TRAJECTORY_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ode,
    Sde,
    DeltaRnOde,
    DeltaRnSde,
}

impl SamplerKind {
    pub fn is_sde(self) -> bool {
        matches!(self, SamplerKind::Sde | SamplerKind::DeltaRnSde)
    }

    pub fn is_delta_rn(self) -> bool {
        matches!(self, SamplerKind::DeltaRnOde | SamplerKind::DeltaRnSde)
    }

    /// The π-noise counterpart of a plain kind.
    pub fn with_delta_rn(self) -> Self {
        match self {
            SamplerKind::Ode | SamplerKind::DeltaRnOde => SamplerKind::DeltaRnOde,
            SamplerKind::Sde | SamplerKind::DeltaRnSde => SamplerKind::DeltaRnSde,
        }
    }

    /// The plain counterpart of a π-noise kind.
    pub fn without_delta_rn(self) -> Self {
        match self {
            SamplerKind::Ode | SamplerKind::DeltaRnOde => SamplerKind::Ode,
            SamplerKind::Sde | SamplerKind::DeltaRnSde => SamplerKind::Sde,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ode => "ode",
            SamplerKind::Sde => "sde",
            SamplerKind::DeltaRnOde => "delta_rn_ode",
            SamplerKind::DeltaRnSde => "delta_rn_sde",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ode" => Ok(Self::Ode),
            "sde" => Ok(Self::Sde),
            "delta_rn_ode" => Ok(Self::DeltaRnOde),
            "delta_rn_sde" => Ok(Self::DeltaRnSde),
            other => Err(Error::InvalidArgument(format!("unknown sampler kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `w_t = c`
    Constant,
    /// `w_t = c·(1 − t)`
    Linear,
    /// `w_t = c·t·(1 − t)`
    Bridge,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "linear" => Ok(Self::Linear),
            "bridge" => Ok(Self::Bridge),
            other => Err(Error::InvalidArgument(format!("unknown diffusion schedule `{other}`"))),
        }
    }
}

/// Diffusion coefficient `w_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diffusion {
    pub schedule: ScheduleKind,
    pub c: f64,
}

impl Default for Diffusion {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Linear,
            c: 1.0,
        }
    }
}

impl Diffusion {
    pub fn at(&self, t: f64) -> f64 {
        match self.schedule {
            ScheduleKind::Constant => self.c,
            ScheduleKind::Linear => self.c * (1.0 - t),
            ScheduleKind::Bridge => self.c * t * (1.0 - t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub steps: usize,
    pub window: TimeWindow,
    pub diffusion: Diffusion,
    pub cfg_scale: Option<f64>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ode,
            steps: 100,
            window: TimeWindow::default(),
            diffusion: Diffusion::default(),
            cfg_scale: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidArgument("sampler needs steps >= 1".into()));
        }
        if !(self.diffusion.c >= 0.0 && self.diffusion.c.is_finite()) {
            return Err(Error::InvalidArgument("diffusion coefficient must be finite and >= 0".into()));
        }
        if let Some(s) = self.cfg_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("cfg scale {s} must be >= 0")));
            }
        }
        Ok(())
    }

    /// `t_min, …, t_max` with `steps` uniform intervals.
    pub fn grid(&self) -> Vec<f64> {
        let TimeWindow { t_min, t_max } = self.window;
        let h = (t_max - t_min) / self.steps as f64;
        let mut g: Vec<f64> = (0..self.steps).map(|k| t_min + k as f64 * h).collect();
        g.push(t_max);
        g
    }
}

/// States along generation. `states[k]` is the `n × d` batch at `times[k]`;
/// `injected[k]` is the π-noise added during step `k`, already multiplied
/// by that step's `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Tensor>,
    pub injected: Option<Vec<Tensor>>,
}

/// One velocity evaluation (plus π-noise parameters when requested).
pub struct FieldEval {
    pub velocity: Tensor,
    pub noise: Option<NoiseParams>,
}

/// Anything the samplers can integrate.
pub trait VelocityField: Sync {
    fn data_dim(&self) -> usize;

    fn eval(&self, x: &Tensor, t: f64, labels: &[Option<usize>], with_noise: bool) -> Result<FieldEval>;

    /// Score used by SDE kinds, given the velocity actually driving the
    /// step. Defaults to the conversion from velocity.
    fn score(&self, x: &Tensor, t: f64, v: &Tensor) -> Result<Tensor> {
        velocity_to_score(x, t, v)
    }

    fn has_noise(&self) -> bool {
        false
    }
}

/// A trained model, optionally with its noise generator and guidance.
pub struct ModelField<'a> {
    pub model: &'a VelocityModel,
    pub gen: Option<&'a NoiseGenerator>,
    pub cfg_scale: Option<f64>,
}

impl VelocityField for ModelField<'_> {
    fn data_dim(&self) -> usize {
        self.model.data_dim
    }

    fn eval(&self, x: &Tensor, t: f64, labels: &[Option<usize>], with_noise: bool) -> Result<FieldEval> {
        let m = self.model;
        let features = m.backbone_features(x, &[t], labels)?;
        let velocity = match self.cfg_scale {
            None => m.head_apply(&features, x.shape())?,
            Some(scale) => {
                let v_label = m.head_apply(&features, x.shape())?;
                let null = vec![Some(m.null_token()); x.rows()];
                let v_null = m.head_apply(&m.backbone_features(x, &[t], &null)?, x.shape())?;
                guide(&v_label, &v_null, scale)?
            }
        };
        let noise = match (with_noise, self.gen) {
            (true, Some(g)) => Some(g.forward(&features, x.shape())?.0),
            _ => None,
        };
        Ok(FieldEval { velocity, noise })
    }

    fn has_noise(&self) -> bool {
        self.gen.is_some()
    }
}

/// `(1 − s)·v_null + s·v_label`, i.e. `v_null + s·(v_label − v_null)`;
/// exact at `s = 0` and `s = 1`.
fn guide(v_label: &Tensor, v_null: &Tensor, scale: f64) -> Result<Tensor> {
    v_null.zip_map(v_label, |n, l| (1.0 - scale) * n + scale * l)
}

/// Classifier-free guided velocity at one state.
pub fn cfg_velocity(model: &VelocityModel, x: &Tensor, t: f64, label: usize, scale: f64) -> Result<Tensor> {
    if !model.is_conditional() {
        return Err(Error::Contract("guidance needs a class-conditional model".into()));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("cfg scale {scale} must be >= 0")));
    }
    let v_label = model.velocity_eval(x, t, Some(label))?;
    let v_null = model.velocity_eval(x, t, Some(model.null_token()))?;
    guide(&v_label, &v_null, scale)
}

pub fn ode_step(v: &Tensor, x: &Tensor, dt: f64) -> Result<Tensor> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt {dt} must be > 0")));
    }
    x.zip_map(v, |x, v| x + v * dt)
}

/// Euler–Maruyama update with a given standard-normal increment `xi`.
pub fn sde_update(v: &Tensor, s: &Tensor, x: &Tensor, dt: f64, w: f64, xi: &Tensor) -> Result<Tensor> {
    if !(w >= 0.0) {
        return Err(Error::InvalidArgument(format!("diffusion coefficient {w} is negative")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt {dt} must be > 0")));
    }
    v.same_shape(s)?;
    v.same_shape(x)?;
    v.same_shape(xi)?;
    let sigma = (w * dt).sqrt();
    let data = x
        .data()
        .iter()
        .zip(v.data())
        .zip(s.data())
        .zip(xi.data())
        .map(|(((&x, &v), &s), &xi)| x + (v + 0.5 * w * s) * dt + sigma * xi)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Euler–Maruyama step drawing `ξ ~ N(0, I)` from `rng`.
pub fn sde_step(v: &Tensor, s: &Tensor, x: &Tensor, dt: f64, w: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(w >= 0.0) {
        return Err(Error::InvalidArgument(format!("diffusion coefficient {w} is negative")));
    }
    let xi = rng.sample_normal(x.shape());
    sde_update(v, s, x, dt, w, &xi)
}

struct ChunkResult {
    samples: Tensor,
    states: Vec<Tensor>,
    injected: Vec<Tensor>,
}

fn run_chunk<F: VelocityField>(
    field: &F,
    config: &SamplerConfig,
    grid: &[f64],
    first: usize,
    count: usize,
    labels: &[Option<usize>],
    record: bool,
) -> Result<ChunkResult> {
    let d = field.data_dim();
    let kind = config.kind;
    let mut main: Vec<Rng> = (0..count)
        .map(|i| Rng::with_stream(config.seed, 2 * (first + i) as u64))
        .collect();
    let mut aux: Vec<Rng> = if kind.is_delta_rn() {
        (0..count)
            .map(|i| Rng::with_stream(config.seed, 2 * (first + i) as u64 + 1))
            .collect()
    } else {
        Vec::new()
    };
    let mut x0 = Vec::with_capacity(count * d);
    for r in main.iter_mut() {
        x0.extend((0..d).map(|_| r.normal()));
    }
    let mut x = Tensor::matrix(count, d, x0);
    let mut states = Vec::new();
    let mut injected = Vec::new();
    if record {
        states.push(x.clone());
    }
    for k in 0..grid.len() - 1 {
        let (t, dt) = (grid[k], grid[k + 1] - grid[k]);
        let out = field.eval(&x, t, labels, kind.is_delta_rn())?;
        let mut v = out.velocity;
        if let Some(params) = out.noise {
            let mut base = Vec::with_capacity(count * d);
            for r in aux.iter_mut() {
                base.extend((0..d).map(|_| params.family.base_draw(r)));
            }
            let z = params.apply(&Tensor::matrix(count, d, base))?;
            if record {
                injected.push(z.scale(dt));
            }
            v = v.add(&z)?;
        } else if kind.is_delta_rn() && record {
            injected.push(Tensor::zeros(&[count, d]));
        }
        x = if kind.is_sde() {
            let s = field.score(&x, t, &v)?;
            let mut xi = Vec::with_capacity(count * d);
            for r in main.iter_mut() {
                xi.extend((0..d).map(|_| r.normal()));
            }
            sde_update(&v, &s, &x, dt, config.diffusion.at(t), &Tensor::matrix(count, d, xi))?
        } else {
            ode_step(&v, &x, dt)?
        };
        if record {
            states.push(x.clone());
        }
    }
    let t_max = *grid.last().unwrap();
    if t_max < 1.0 {
        let v = field.eval(&x, t_max, labels, false)?.velocity;
        x = ode_step(&v, &x, 1.0 - t_max)?;
        if record {
            states.push(x.clone());
        }
    }
    x.ensure_finite()?;
    Ok(ChunkResult {
        samples: x,
        states,
        injected,
    })
}

fn concat_rows(parts: &[&Tensor], d: usize) -> Tensor {
    let mut data = Vec::new();
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let n = data.len() / d.max(1);
    Tensor::matrix(n, d, data)
}

/// Integrates `n` trajectories of `field`. `labels` is empty or has one
/// entry per trajectory.
pub fn sample_field<F: VelocityField>(
    field: &F,
    config: &SamplerConfig,
    n: usize,
    labels: &[Option<usize>],
    record: bool,
) -> Result<(Tensor, Option<Trajectory>)> {
    config.validate()?;
    if !labels.is_empty() && labels.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for {n} samples", labels.len())));
    }
    if config.kind.is_delta_rn() && !field.has_noise() {
        return Err(Error::Contract(format!(
            "sampler kind {} needs a noise generator",
            config.kind.name()
        )));
    }
    let d = field.data_dim();
    let grid = config.grid();
    let starts: Vec<usize> = (0..n).step_by(TRAJECTORY_CHUNK).collect();
    let chunks: Vec<ChunkResult> = starts
        .par_iter()
        .map(|&first| {
            let count = TRAJECTORY_CHUNK.min(n - first);
            let lab = if labels.is_empty() { &[][..] } else { &labels[first..first + count] };
            run_chunk(field, config, &grid, first, count, lab, record)
        })
        .collect::<Result<_>>()?;
    let samples = concat_rows(&chunks.iter().map(|c| &c.samples).collect::<Vec<_>>(), d);
    let trajectory = record.then(|| {
        let mut times = grid.clone();
        if *grid.last().unwrap() < 1.0 {
            times.push(1.0);
        }
        let states = (0..times.len())
            .map(|k| concat_rows(&chunks.iter().map(|c| &c.states[k]).collect::<Vec<_>>(), d))
            .collect();
        let injected = config.kind.is_delta_rn().then(|| {
            (0..grid.len() - 1)
                .map(|k| concat_rows(&chunks.iter().map(|c| &c.injected[k]).collect::<Vec<_>>(), d))
                .collect()
        });
        Trajectory {
            times,
            states,
            injected,
        }
    });
    Ok((samples, trajectory))
}

/// Draws `n` samples from a trained model.
///
/// `gen` must be present exactly when the kind is a π-noise kind; labels
/// require a conditional model; guidance requires labels.
pub fn generate(
    model: &VelocityModel,
    gen: Option<&NoiseGenerator>,
    config: &SamplerConfig,
    n: usize,
    labels: Option<&[usize]>,
    record: bool,
) -> Result<(Tensor, Option<Trajectory>)> {
    if config.kind.is_delta_rn() != gen.is_some() {
        return Err(Error::Contract(if gen.is_some() {
            format!("sampler kind {} does not use a noise generator", config.kind.name())
        } else {
            format!("sampler kind {} needs a noise generator", config.kind.name())
        }));
    }
    if labels.is_some() && !model.is_conditional() {
        return Err(Error::Contract("labels given to an unconditional model".into()));
    }
    if config.cfg_scale.is_some() {
        if !model.is_conditional() {
            return Err(Error::Contract("guidance needs a class-conditional model".into()));
        }
        if labels.is_none() {
            return Err(Error::Contract("guidance needs target labels".into()));
        }
    }
    if let Some(g) = gen {
        if g.feature_dim() != model.feature_dim() || g.data_dim() != model.data_dim {
            return Err(Error::Contract("noise generator does not fit the model".into()));
        }
    }
    let labels: Vec<Option<usize>> = labels
        .map(|l| l.iter().map(|&v| Some(v)).collect())
        .unwrap_or_default();
    let field = ModelField {
        model,
        gen,
        cfg_scale: config.cfg_scale,
    };
    sample_field(&field, config, n, &labels, record)
}

/// Per-step injected π-noise and its running sum.
pub fn noise_ledger(trajectory: &Trajectory) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let per_step = trajectory
        .injected
        .clone()
        .ok_or_else(|| Error::Contract("trajectory has no recorded noise".into()))?;
    let mut cumulative: Vec<Tensor> = Vec::with_capacity(per_step.len());
    for step in &per_step {
        let next = match cumulative.last() {
            Some(prev) => prev.add(step)?,
            None => step.clone(),
        };
        cumulative.push(next);
    }
    Ok((per_step, cumulative))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, NoiseFamily, TimeEmbedding};
    use crate::numerics::Linear;

    struct Constant(Vec<f64>);

    impl VelocityField for Constant {
        fn data_dim(&self) -> usize {
            self.0.len()
        }
        fn eval(&self, x: &Tensor, _t: f64, _l: &[Option<usize>], _n: bool) -> Result<FieldEval> {
            let data = (0..x.rows()).flat_map(|_| self.0.iter().copied()).collect();
            Ok(FieldEval {
                velocity: Tensor::matrix(x.rows(), self.0.len(), data),
                noise: None,
            })
        }
    }

    struct Decay;

    impl VelocityField for Decay {
        fn data_dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &Tensor, _t: f64, _l: &[Option<usize>], _n: bool) -> Result<FieldEval> {
            Ok(FieldEval {
                velocity: x.scale(-1.0),
                noise: None,
            })
        }
    }

    fn tiny_model(rng: &mut Rng, classes: usize) -> VelocityModel {
        let cfg = ModelConfig {
            hidden: 16,
            depth: 2,
            res_blocks: 1,
            time_embed: TimeEmbedding { dim: 8, base: 1e4 },
            ..ModelConfig::default()
        };
        let mut m = VelocityModel::new(2, classes, &cfg, rng);
        m.head = Linear::new(16, 2, rng);
        m
    }

    #[test]
    fn ode_step_basics() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(ode_step(&Tensor::zeros(&[2]), &x, 0.1).unwrap(), x);
        assert!(ode_step(&x, &x, 0.0).is_err());
    }

    #[test]
    fn constant_field_is_integrated_exactly() {
        let cfg = SamplerConfig {
            steps: 64,
            window: TimeWindow::new(0.0, 1.0).unwrap(),
            ..SamplerConfig::default()
        };
        let (samples, traj) = sample_field(&Constant(vec![0.5, -2.0]), &cfg, 3, &[], true).unwrap();
        let traj = traj.unwrap();
        let x0 = &traj.states[0];
        for i in 0..3 {
            assert!((samples.row(i)[0] - (x0.row(i)[0] + 0.5)).abs() < 1e-14);
            assert!((samples.row(i)[1] - (x0.row(i)[1] - 2.0)).abs() < 1e-14);
        }
        assert_eq!(traj.times.len(), traj.states.len());
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn euler_error_is_first_order() {
        let err = |steps: usize| {
            let cfg = SamplerConfig {
                steps,
                window: TimeWindow::new(0.0, 1.0).unwrap(),
                ..SamplerConfig::default()
            };
            let (s, traj) = sample_field(&Decay, &cfg, 1, &[], true).unwrap();
            let x0 = traj.unwrap().states[0].data()[0];
            (s.data()[0] - x0 * (-1.0f64).exp()).abs() / x0.abs()
        };
        let (e1, e2, e3) = (err(50), err(100), err(200));
        assert!((e1 / e2 - 2.0).abs() < 0.05, "{e1} {e2}");
        assert!((e2 / e3 - 2.0).abs() < 0.05, "{e2} {e3}");
    }

    #[test]
    fn zero_diffusion_matches_ode() {
        let mut rng = Rng::new(1);
        let x = rng.sample_normal(&[4, 2]);
        let v = rng.sample_normal(&[4, 2]);
        let s = rng.sample_normal(&[4, 2]);
        let a = sde_step(&v, &s, &x, 0.01, 0.0, &mut rng).unwrap();
        assert_eq!(a, ode_step(&v, &x, 0.01).unwrap());
        assert!(sde_step(&v, &s, &x, 0.01, -1.0, &mut rng).is_err());
        let mut r1 = Rng::new(9);
        let mut r2 = Rng::new(9);
        assert_eq!(
            sde_step(&v, &s, &x, 0.01, 0.7, &mut r1).unwrap(),
            sde_step(&v, &s, &x, 0.01, 0.7, &mut r2).unwrap()
        );
    }

    #[test]
    fn zero_schedule_sde_equals_ode_sampler() {
        let mut rng = Rng::new(2);
        let m = tiny_model(&mut rng, 0);
        let ode = SamplerConfig { steps: 20, seed: 4, ..SamplerConfig::default() };
        let sde = SamplerConfig {
            kind: SamplerKind::Sde,
            diffusion: Diffusion { schedule: ScheduleKind::Constant, c: 0.0 },
            ..ode.clone()
        };
        assert_eq!(
            generate(&m, None, &ode, 10, None, false).unwrap().0,
            generate(&m, None, &sde, 10, None, false).unwrap().0
        );
    }

    #[test]
    fn single_step_unrolls() {
        let mut rng = Rng::new(3);
        let m = tiny_model(&mut rng, 0);
        let cfg = SamplerConfig { steps: 1, seed: 8, ..SamplerConfig::default() };
        let (s, traj) = generate(&m, None, &cfg, 1, None, true).unwrap();
        let x0 = traj.unwrap().states[0].row(0).to_vec();
        let x0 = Tensor::vector(x0);
        let tw = cfg.window;
        let v0 = m.velocity_eval(&x0, tw.t_min, None).unwrap();
        let x1 = ode_step(&v0, &x0, tw.t_max - tw.t_min).unwrap();
        let v1 = m.velocity_eval(&x1, tw.t_max, None).unwrap();
        let x2 = ode_step(&v1, &x1, 1.0 - tw.t_max).unwrap();
        assert_eq!(s.row(0), x2.data());
    }

    #[test]
    fn fresh_generator_collapses_to_plain_sampler() {
        let mut rng = Rng::new(4);
        let m = tiny_model(&mut rng, 0);
        for family in NoiseFamily::ALL {
            let g = NoiseGenerator::for_model(&m, family, 1, &mut rng);
            for kind in [SamplerKind::Ode, SamplerKind::Sde] {
                let plain = SamplerConfig { kind, steps: 15, seed: 21, ..SamplerConfig::default() };
                let delta = SamplerConfig { kind: kind.with_delta_rn(), ..plain.clone() };
                let (a, _) = generate(&m, None, &plain, 300, None, false).unwrap();
                let (b, traj) = generate(&m, Some(&g), &delta, 300, None, true).unwrap();
                assert_eq!(a, b);
                let (per, cum) = noise_ledger(&traj.unwrap()).unwrap();
                assert!(per.iter().chain(&cum).all(|t| t.data().iter().all(|&v| v == 0.0)));
            }
        }
    }

    #[test]
    fn contract_errors() {
        let mut rng = Rng::new(5);
        let m = tiny_model(&mut rng, 0);
        let g = NoiseGenerator::for_model(&m, NoiseFamily::Gaussian, 0, &mut rng);
        let delta = SamplerConfig { kind: SamplerKind::DeltaRnSde, ..SamplerConfig::default() };
        assert!(matches!(generate(&m, None, &delta, 2, None, false), Err(Error::Contract(_))));
        let plain = SamplerConfig::default();
        assert!(matches!(generate(&m, Some(&g), &plain, 2, None, false), Err(Error::Contract(_))));
        assert!(matches!(generate(&m, None, &plain, 2, Some(&[0, 0]), false), Err(Error::Contract(_))));
        let guided = SamplerConfig { cfg_scale: Some(1.5), ..SamplerConfig::default() };
        assert!(matches!(generate(&m, None, &guided, 2, None, false), Err(Error::Contract(_))));
        assert!(matches!(
            cfg_velocity(&m, &Tensor::zeros(&[2]), 0.5, 0, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn guidance_identities() {
        let mut rng = Rng::new(6);
        let m = tiny_model(&mut rng, 3);
        let x = rng.sample_normal(&[2]);
        let v_label = m.velocity_eval(&x, 0.3, Some(1)).unwrap();
        let v_null = m.velocity_eval(&x, 0.3, None).unwrap();
        assert_eq!(cfg_velocity(&m, &x, 0.3, 1, 1.0).unwrap(), v_label);
        assert_eq!(cfg_velocity(&m, &x, 0.3, 1, 0.0).unwrap(), v_null);
        assert_eq!(guide(&Tensor::vector(vec![2.0, 0.0]), &Tensor::vector(vec![1.0, 0.0]), 1.5).unwrap().data(), &[2.5, 0.0]);
    }

    #[test]
    fn results_independent_of_chunking() {
        let mut rng = Rng::new(7);
        let m = tiny_model(&mut rng, 0);
        let cfg = SamplerConfig { kind: SamplerKind::Sde, steps: 10, seed: 3, ..SamplerConfig::default() };
        let (all, _) = generate(&m, None, &cfg, TRAJECTORY_CHUNK + 5, None, false).unwrap();
        let (few, _) = generate(&m, None, &cfg, 5, None, false).unwrap();
        assert_eq!(&all.data()[..10], few.data());
    }
}
