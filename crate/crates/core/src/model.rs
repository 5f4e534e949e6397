//! Velocity network, the noise-generator head that sits on its backbone
//! features, and the three reparameterized noise families.
//!
//! Topology:
//!
//! ```text
//! (x, time-embed [+ class-embed]) ──trunk──► features ──head──► v
//!                                               │
//!                                      extra residual blocks
//!                                        ├─ loc head (zero init) ──► loc
//!                                        └─ raw-scale head ──► gate·softplus(raw) = scale
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::interpolant::check_unit_time;
use crate::numerics::{
    blocks_backward, blocks_forward, sigmoid, softplus, Activation, BlockTape, Linear, MlpParams,
    MlpTape, ParamSet, ResidualBlock, Rng, Tensor,
};

/// Clamp applied to uniform base draws before the Gumbel double log.
pub const UNIFORM_CLAMP: f64 = 1e-12;

/// Sinusoidal embedding `[cos(t·f_i), sin(t·f_i)]` with
/// `f_i = base^(−i/half)`, `i = 0..half`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub base: f64,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self {
            dim: 64,
            base: 1e4,
        }
    }
}

impl TimeEmbedding {
    pub fn embed_into(&self, t: f64, out: &mut [f64]) {
        let half = self.dim / 2;
        for i in 0..half {
            let freq = (-self.base.ln() * i as f64 / half as f64).exp();
            out[i] = (t * freq).cos();
            out[half + i] = (t * freq).sin();
        }
        if self.dim % 2 == 1 {
            out[self.dim - 1] = 0.0;
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub depth: usize,
    pub res_blocks: usize,
    pub time_embed: TimeEmbedding,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            depth: 3,
            res_blocks: 2,
            time_embed: TimeEmbedding::default(),
            activation: Activation::Silu,
        }
    }
}

/// Learned velocity field `v_ψ(x, t [, label])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityModel {
    pub data_dim: usize,
    pub time_embed: TimeEmbedding,
    /// Number of classes; 0 for an unconditional model.
    pub class_count: usize,
    /// `(class_count + 1) × time_embed.dim`; the last row is the null token.
    pub class_embed: Option<Tensor>,
    pub trunk: MlpParams,
    pub head: Linear,
}

/// Tape for one batched velocity forward pass.
#[derive(Debug, Clone)]
pub struct VelocityTape {
    trunk: MlpTape,
    features: Tensor,
    embed_rows: Vec<usize>,
}

impl VelocityTape {
    pub fn features(&self) -> &Tensor {
        &self.features
    }
}

impl VelocityModel {
    /// Random trunk, zero-initialized velocity head.
    pub fn new(data_dim: usize, class_count: usize, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let e = cfg.time_embed.dim;
        let mut dims = vec![data_dim + e];
        dims.extend(std::iter::repeat(cfg.hidden).take(cfg.depth.max(1)));
        let trunk = MlpParams::new(&dims, cfg.res_blocks, cfg.activation, rng);
        let class_embed = (class_count > 0).then(|| {
            let data = (0..(class_count + 1) * e).map(|_| 0.1 * rng.normal()).collect();
            Tensor::matrix(class_count + 1, e, data)
        });
        Self {
            data_dim,
            time_embed: cfg.time_embed,
            class_count,
            class_embed,
            trunk,
            head: Linear::zeros(cfg.hidden, data_dim),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn is_conditional(&self) -> bool {
        self.class_count > 0
    }

    pub fn null_token(&self) -> usize {
        self.class_count
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk.validate()?;
        let e = self.time_embed.dim;
        if self.trunk.input_dim() != self.data_dim + e {
            return dim_err("trunk input must be data_dim + time embedding width");
        }
        if self.head.in_dim() != self.feature_dim() || self.head.out_dim() != self.data_dim {
            return dim_err("velocity head must map features to data_dim");
        }
        match (&self.class_embed, self.class_count) {
            (None, 0) => Ok(()),
            (Some(t), k) if k > 0 && t.shape() == [k + 1, e] => Ok(()),
            _ => dim_err("class embedding table does not match class_count"),
        }
    }

    fn resolve_label(&self, label: Option<usize>) -> Result<Option<usize>> {
        match (self.class_count, label) {
            (0, None) => Ok(None),
            (0, Some(l)) => Err(Error::Label(format!(
                "label {l} given to an unconditional model"
            ))),
            (k, None) => Ok(Some(k)),
            (k, Some(l)) if l <= k => Ok(Some(l)),
            (k, Some(l)) => Err(Error::Label(format!(
                "label {l} outside 0..{k} (null token {k})"
            ))),
        }
    }

    fn trunk_input(&self, x: &Tensor, t: &[f64], labels: &[Option<usize>]) -> Result<(Tensor, Vec<usize>)> {
        let d = self.data_dim;
        if x.cols() != d {
            return dim_err(format!("state width {} but model expects {d}", x.cols()));
        }
        let n = x.rows();
        if t.len() != 1 && t.len() != n {
            return dim_err(format!("{} times for {n} rows", t.len()));
        }
        if !labels.is_empty() && labels.len() != n {
            return dim_err(format!("{} labels for {n} rows", labels.len()));
        }
        let e = self.time_embed.dim;
        let w = d + e;
        let mut data = vec![0.0; n * w];
        let mut embed_rows = Vec::new();
        for r in 0..n {
            let tr = if t.len() == 1 { t[0] } else { t[r] };
            check_unit_time(tr)?;
            let row = &mut data[r * w..(r + 1) * w];
            row[..d].copy_from_slice(x.row(r));
            self.time_embed.embed_into(tr, &mut row[d..]);
            let label = labels.get(r).copied().flatten();
            if let Some(idx) = self.resolve_label(label)? {
                let table = self.class_embed.as_ref().expect("validated");
                for (a, b) in row[d..].iter_mut().zip(table.row(idx)) {
                    *a += b;
                }
                embed_rows.push(idx);
            }
        }
        Ok((Tensor::matrix(n, w, data), embed_rows))
    }

    /// Batched forward. `t` holds one time per row or a single shared time;
    /// `labels` is empty (all unlabeled) or one entry per row.
    pub fn forward_batch(
        &self,
        x: &Tensor,
        t: &[f64],
        labels: &[Option<usize>],
    ) -> Result<(Tensor, VelocityTape)> {
        let (input, embed_rows) = self.trunk_input(x, t, labels)?;
        let (features, trunk) = self.trunk.forward(&input)?;
        let v = self.head_apply(&features, x.shape())?;
        Ok((
            v,
            VelocityTape {
                trunk,
                features,
                embed_rows,
            },
        ))
    }

    /// Trunk output feeding the velocity head.
    pub fn backbone_features(&self, x: &Tensor, t: &[f64], labels: &[Option<usize>]) -> Result<Tensor> {
        let (input, _) = self.trunk_input(x, t, labels)?;
        Ok(self.trunk.forward(&input)?.0)
    }

    /// Velocity head applied to features, output shaped like `shape`.
    pub fn head_apply(&self, features: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if features.cols() != self.feature_dim() {
            return dim_err("feature width does not match the velocity head");
        }
        let v = self.head.forward_rows(features.data(), features.rows());
        Tensor::new(shape.to_vec(), v)
    }

    /// Single-state velocity; `x` may have any shape whose last axis is the
    /// data dimension.
    pub fn velocity_eval(&self, x: &Tensor, t: f64, label: Option<usize>) -> Result<Tensor> {
        let labels = vec![label; x.rows()];
        Ok(self.forward_batch(x, &[t], &labels)?.0)
    }

    /// Accumulates parameter gradients of `⟨grad_v, v⟩ + ⟨grad_features, features⟩`.
    pub fn backward(
        &self,
        tape: &VelocityTape,
        grad_v: &Tensor,
        grad_features: Option<&Tensor>,
        grads: &mut VelocityModel,
    ) -> Result<()> {
        let rows = tape.features.rows();
        if grad_v.len() != rows * self.data_dim {
            return Err(Error::Tape("grad_v does not match taped output".into()));
        }
        let mut df = self
            .head
            .backward_rows(tape.features.data(), rows, grad_v.data(), &mut grads.head, true)
            .expect("input grad");
        if let Some(extra) = grad_features {
            if extra.len() != df.len() {
                return Err(Error::Tape("feature gradient shape mismatch".into()));
            }
            df.iter_mut().zip(extra.data()).for_each(|(a, b)| *a += b);
        }
        let df = Tensor::new(tape.features.shape().to_vec(), df)?;
        let gi = self.trunk.backward_into(&tape.trunk, &df, &mut grads.trunk)?;
        if let Some(table) = grads.class_embed.as_mut() {
            let d = self.data_dim;
            for (r, &idx) in tape.embed_rows.iter().enumerate() {
                let src = &gi.row(r)[d..];
                for (a, b) in table.row_mut(idx).iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        Ok(())
    }
}

impl ParamSet for VelocityModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.trunk.tensors();
        v.extend(self.head.tensors());
        v.extend(self.class_embed.iter());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.trunk.tensors_mut();
        v.extend(self.head.tensors_mut());
        v.extend(self.class_embed.iter_mut());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Gumbel,
    Uniform,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [NoiseFamily::Gaussian, NoiseFamily::Gumbel, NoiseFamily::Uniform];

    /// Parameter-free base draw `h` so that `z = loc + scale·h`:
    /// normal, `−ln(−ln u)`, or `u` with `u ~ U[0,1)`.
    pub fn base_draw(self, rng: &mut Rng) -> f64 {
        match self {
            NoiseFamily::Gaussian => rng.normal(),
            NoiseFamily::Gumbel => {
                let u = rng.uniform().clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
                -(-u.ln()).ln()
            }
            NoiseFamily::Uniform => rng.uniform(),
        }
    }

    pub fn base_tensor(self, shape: &[usize], rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.base_draw(rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("finite base draws")
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Gumbel => "gumbel",
            NoiseFamily::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "gumbel" => Ok(Self::Gumbel),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::InvalidArgument(format!("unknown noise family `{other}`"))),
        }
    }
}

/// Location and effective (post-gate) scale of a reparameterized family:
/// `(μ, σ)` gaussian, `(μ, β)` gumbel, `(a, b − a)` uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    pub family: NoiseFamily,
    pub loc: Tensor,
    pub scale: Tensor,
}

impl NoiseParams {
    /// `loc + scale ⊙ base`.
    pub fn apply(&self, base: &Tensor) -> Result<Tensor> {
        let scaled = self.scale.zip_map(base, |s, h| s * h)?;
        self.loc.add(&scaled)
    }
}

/// Reparameterized draw with a fresh base sample from `rng`.
pub fn noise_sample(params: &NoiseParams, rng: &mut Rng) -> Result<Tensor> {
    let base = params.family.base_tensor(params.loc.shape(), rng);
    params.apply(&base)
}

/// π-noise generator operating on frozen backbone features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseGenerator {
    pub family: NoiseFamily,
    pub activation: Activation,
    pub blocks: Vec<ResidualBlock>,
    pub loc_head: Linear,
    pub scale_head: Linear,
    /// Scalar gate, shape `[1]`.
    pub gate: Tensor,
}

#[derive(Debug, Clone)]
pub struct NoiseTape {
    block_tapes: Vec<BlockTape>,
    hidden: Vec<f64>,
    raw: Vec<f64>,
    rows: usize,
}

impl NoiseGenerator {
    /// Random residual blocks and raw-scale head; zero loc head; zero gate.
    pub fn new(
        family: NoiseFamily,
        feature_dim: usize,
        data_dim: usize,
        extra_blocks: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let blocks = (0..extra_blocks)
            .map(|_| ResidualBlock::new(feature_dim, rng))
            .collect();
        let scale_head = Linear::new(feature_dim, data_dim, rng);
        Self {
            family,
            activation,
            blocks,
            loc_head: Linear::zeros(feature_dim, data_dim),
            scale_head,
            gate: Tensor::scalar(0.0),
        }
    }

    /// Generator sized for `model`.
    pub fn for_model(
        model: &VelocityModel,
        family: NoiseFamily,
        extra_blocks: usize,
        rng: &mut Rng,
    ) -> Self {
        Self::new(
            family,
            model.feature_dim(),
            model.data_dim,
            extra_blocks,
            model.trunk.activation,
            rng,
        )
    }

    pub fn feature_dim(&self) -> usize {
        self.loc_head.in_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.loc_head.out_dim()
    }

    pub fn gate_value(&self) -> f64 {
        self.gate.data()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.feature_dim();
        if self.scale_head.in_dim() != f || self.scale_head.out_dim() != self.data_dim() {
            return dim_err("loc and scale heads disagree");
        }
        if self.blocks.iter().any(|b| b.dim() != f || b.outer.out_dim() != f) {
            return dim_err("extra blocks must preserve the feature width");
        }
        if self.gate.len() != 1 {
            return dim_err("gate must be a scalar");
        }
        Ok(())
    }

    /// `(loc, scale)` for each feature row; output tensors have `data_shape`.
    pub fn forward(&self, features: &Tensor, data_shape: &[usize]) -> Result<(NoiseParams, NoiseTape)> {
        if features.cols() != self.feature_dim() {
            return dim_err(format!(
                "features of width {} given to a generator expecting {}",
                features.cols(),
                self.feature_dim()
            ));
        }
        let rows = features.rows();
        let (hidden, block_tapes) =
            blocks_forward(&self.blocks, features.data().to_vec(), rows, self.activation);
        let loc = self.loc_head.forward_rows(&hidden, rows);
        let raw = self.scale_head.forward_rows(&hidden, rows);
        let gate = self.gate_value();
        let scale = raw.iter().map(|&r| gate * softplus(r)).collect();
        let params = NoiseParams {
            family: self.family,
            loc: Tensor::new(data_shape.to_vec(), loc)?,
            scale: Tensor::new(data_shape.to_vec(), scale)?,
        };
        Ok((
            params,
            NoiseTape {
                block_tapes,
                hidden,
                raw,
                rows,
            },
        ))
    }

    /// Accumulates gradients given `dL/dloc` and `dL/dscale`; returns
    /// `dL/dfeatures`.
    pub fn backward(
        &self,
        tape: &NoiseTape,
        grad_loc: &[f64],
        grad_scale: &[f64],
        grads: &mut NoiseGenerator,
    ) -> Vec<f64> {
        let gate = self.gate_value();
        let mut dgate = 0.0;
        let draw: Vec<f64> = tape
            .raw
            .iter()
            .zip(grad_scale)
            .map(|(&r, &g)| {
                dgate += g * softplus(r);
                g * gate * sigmoid(r)
            })
            .collect();
        grads.gate.data_mut()[0] += dgate;
        let rows = tape.rows;
        let mut dh = self
            .loc_head
            .backward_rows(&tape.hidden, rows, grad_loc, &mut grads.loc_head, true)
            .expect("input grad");
        let dh2 = self
            .scale_head
            .backward_rows(&tape.hidden, rows, &draw, &mut grads.scale_head, true)
            .expect("input grad");
        dh.iter_mut().zip(&dh2).for_each(|(a, b)| *a += b);
        blocks_backward(&self.blocks, &tape.block_tapes, rows, dh, &mut grads.blocks, self.activation)
    }
}

impl ParamSet for NoiseGenerator {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.blocks.iter().flat_map(|b| b.tensors()).collect();
        v.extend(self.loc_head.tensors());
        v.extend(self.scale_head.tensors());
        v.push(&self.gate);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.blocks.iter_mut().flat_map(|b| b.tensors_mut()).collect();
        v.extend(self.loc_head.tensors_mut());
        v.extend(self.scale_head.tensors_mut());
        v.push(&mut self.gate);
        v
    }
}

/// Noise parameters at a single feature vector batch.
pub fn noise_head_eval(gen: &NoiseGenerator, features: &Tensor, data_shape: &[usize]) -> Result<NoiseParams> {
    Ok(gen.forward(features, data_shape)?.0)
}

/// `v_ψ(x, t) + z` with `z` a fresh draw from the generator at the same
/// backbone features.
pub fn delta_rn_velocity(
    model: &VelocityModel,
    gen: &NoiseGenerator,
    x: &Tensor,
    t: f64,
    rng: &mut Rng,
    label: Option<usize>,
) -> Result<Tensor> {
    let labels = vec![label; x.rows()];
    let features = model.backbone_features(x, &[t], &labels)?;
    let v = model.head_apply(&features, x.shape())?;
    let params = noise_head_eval(gen, &features, x.shape())?;
    let z = noise_sample(&params, rng)?;
    v.add(&z)
}

/// Velocity model and noise generator trained as one network (the noise
/// location absorbs into the predicted mean velocity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointModel {
    pub velocity: VelocityModel,
    pub noise: NoiseGenerator,
}

impl ParamSet for JointModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.velocity.tensors();
        v.extend(self.noise.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.velocity.tensors_mut();
        v.extend(self.noise.tensors_mut());
        v
    }
}

/// Parameters added by a generator relative to its backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamRatio {
    pub backbone: usize,
    pub added: usize,
    pub ratio: f64,
}

pub fn added_param_ratio(model: &VelocityModel, gen: &NoiseGenerator) -> ParamRatio {
    let backbone = model.param_count();
    let added = gen.param_count();
    ParamRatio {
        backbone,
        added,
        ratio: added as f64 / backbone as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            hidden: 16,
            depth: 2,
            res_blocks: 1,
            time_embed: TimeEmbedding { dim: 8, base: 1e4 },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_head_gives_zero_velocity() {
        let mut rng = Rng::new(1);
        let m = VelocityModel::new(2, 0, &small_cfg(), &mut rng);
        let x = rng.sample_normal(&[5, 2]);
        let v = m.forward_batch(&x, &[0.3], &[]).unwrap().0;
        assert!(v.data().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn velocity_decomposes_into_head_of_features() {
        let mut rng = Rng::new(2);
        let mut m = VelocityModel::new(2, 3, &small_cfg(), &mut rng);
        m.head = Linear::new(16, 2, &mut rng);
        let x = rng.sample_normal(&[2]);
        for label in [None, Some(0), Some(2), Some(3)] {
            let v = m.velocity_eval(&x, 0.4, label).unwrap();
            let f = m.backbone_features(&x, &[0.4], &[label]).unwrap();
            assert_eq!(f.cols(), m.feature_dim());
            assert_eq!(v, m.head_apply(&f, x.shape()).unwrap());
            assert_eq!(v, m.velocity_eval(&x, 0.4, label).unwrap());
        }
    }

    #[test]
    fn label_errors() {
        let mut rng = Rng::new(3);
        let unc = VelocityModel::new(2, 0, &small_cfg(), &mut rng);
        let x = Tensor::vector(vec![0.0, 0.0]);
        assert!(matches!(unc.velocity_eval(&x, 0.5, Some(0)), Err(Error::Label(_))));
        let cond = VelocityModel::new(2, 4, &small_cfg(), &mut rng);
        assert!(cond.velocity_eval(&x, 0.5, Some(4)).is_ok());
        assert!(matches!(cond.velocity_eval(&x, 0.5, Some(5)), Err(Error::Label(_))));
        assert!(cond.velocity_eval(&x, 1.5, None).is_err());
    }

    #[test]
    fn fresh_generator_is_silent() {
        let mut rng = Rng::new(4);
        let m = VelocityModel::new(2, 0, &small_cfg(), &mut rng);
        for blocks in [0, 1, 2, 4] {
            let g = NoiseGenerator::for_model(&m, NoiseFamily::Gumbel, blocks, &mut rng);
            let f = rng.sample_normal(&[7, 16]);
            let p = noise_head_eval(&g, &f, &[7, 2]).unwrap();
            assert!(p.loc.data().iter().all(|&a| a == 0.0));
            assert!(p.scale.data().iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn width_mismatch() {
        let mut rng = Rng::new(5);
        let g = NoiseGenerator::new(NoiseFamily::Gaussian, 16, 2, 0, Activation::Silu, &mut rng);
        assert!(matches!(
            g.forward(&Tensor::zeros(&[3, 8]), &[3, 2]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn softplus_limit_closes_scale() {
        let mut rng = Rng::new(6);
        let mut g = NoiseGenerator::new(NoiseFamily::Gaussian, 4, 2, 0, Activation::Silu, &mut rng);
        g.gate = Tensor::scalar(1.0);
        g.scale_head = Linear::zeros(4, 2);
        g.scale_head.bias = Tensor::vector(vec![-800.0, -50.0]);
        let p = noise_head_eval(&g, &Tensor::zeros(&[1, 4]), &[2]).unwrap();
        assert_eq!(p.scale.data()[0], 0.0);
        assert!(p.scale.data()[1] < 1e-21);
    }

    #[test]
    fn degenerate_draws() {
        let mut rng = Rng::new(7);
        let loc = Tensor::vector(vec![1.5, -2.0]);
        for family in NoiseFamily::ALL {
            let p = NoiseParams {
                family,
                loc: loc.clone(),
                scale: Tensor::zeros(&[2]),
            };
            assert_eq!(noise_sample(&p, &mut rng).unwrap(), loc);
        }
    }

    #[test]
    fn delta_rn_with_fresh_generator_matches_velocity() {
        let mut rng = Rng::new(8);
        let mut m = VelocityModel::new(2, 0, &small_cfg(), &mut rng);
        m.head = Linear::new(16, 2, &mut rng);
        let g = NoiseGenerator::for_model(&m, NoiseFamily::Gaussian, 1, &mut rng);
        let x = rng.sample_normal(&[2]);
        let v = m.velocity_eval(&x, 0.7, None).unwrap();
        for s in 0..5 {
            let mut r = Rng::new(s);
            assert_eq!(delta_rn_velocity(&m, &g, &x, 0.7, &mut r, None).unwrap(), v);
        }
    }

    #[test]
    fn zero_gate_leaves_only_location_shift() {
        let mut rng = Rng::new(9);
        let mut m = VelocityModel::new(2, 0, &small_cfg(), &mut rng);
        m.head = Linear::new(16, 2, &mut rng);
        let mut g = NoiseGenerator::for_model(&m, NoiseFamily::Uniform, 0, &mut rng);
        g.loc_head = Linear::new(16, 2, &mut rng);
        let x = rng.sample_normal(&[2]);
        let f = m.backbone_features(&x, &[0.2], &[]).unwrap();
        let loc = noise_head_eval(&g, &f, &[2]).unwrap().loc;
        let want = m.velocity_eval(&x, 0.2, None).unwrap().add(&loc).unwrap();
        let got = delta_rn_velocity(&m, &g, &x, 0.2, &mut rng, None).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn extra_block_parameter_counts() {
        let mut rng = Rng::new(10);
        let m = VelocityModel::new(2, 0, &ModelConfig::default(), &mut rng);
        let heads = 2 * (128 * 2 + 2) + 1;
        let block = 2 * (128 * 128 + 128);
        for b in [0, 1, 2, 4] {
            let g = NoiseGenerator::for_model(&m, NoiseFamily::Gaussian, b, &mut rng);
            assert_eq!(added_param_ratio(&m, &g).added, heads + b * block);
        }
    }
}
