//! Multilayer perceptrons with a per-call gradient tape.
//!
//! Every layer operates on a batch: inputs are `rows × in` matrices (the
//! leading axes of a tensor are flattened into rows). A forward call returns
//! the output together with a tape holding the intermediate values needed
//! for the exact reverse pass.

use serde::{Deserialize, Serialize};

use super::{gemm, ParamSet, Rng, Tensor};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Silu => x * sigmoid(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    fn apply_all(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    /// `grad ⊙ act'(pre)` in place.
    fn chain(self, grad: &mut [f64], pre: &[f64]) {
        for (g, &p) in grad.iter_mut().zip(pre) {
            *g *= self.derivative(p);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Affine map `y = W·x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform init on `±1/√in` for weights and biases.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect()
        };
        let weight = Tensor::matrix(out_dim, in_dim, draw(out_dim * in_dim));
        let bias = Tensor::vector(draw(out_dim));
        Self { weight, bias }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    /// Forward on `rows × in` row-major data.
    pub fn forward_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (i, o) = (self.in_dim(), self.out_dim());
        debug_assert_eq!(x.len(), rows * i);
        let mut y = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            y.extend_from_slice(self.bias.data());
        }
        gemm(
            rows,
            i,
            o,
            x,
            (i as isize, 1),
            self.weight.data(),
            (1, i as isize),
            &mut y,
            true,
        );
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx` when
    /// requested.
    pub fn backward_rows(
        &self,
        x: &[f64],
        rows: usize,
        dy: &[f64],
        grad: &mut Linear,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (i, o) = (self.in_dim(), self.out_dim());
        // dW (o×i) += dYᵀ (o×rows) · X (rows×i)
        gemm(
            o,
            rows,
            i,
            dy,
            (1, o as isize),
            x,
            (i as isize, 1),
            grad.weight.data_mut(),
            true,
        );
        let db = grad.bias.data_mut();
        for r in 0..rows {
            for (b, g) in db.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
                *b += g;
            }
        }
        need_input_grad.then(|| {
            let mut dx = vec![0.0; rows * i];
            gemm(
                rows,
                o,
                i,
                dy,
                (o as isize, 1),
                self.weight.data(),
                (i as isize, 1),
                &mut dx,
                false,
            );
            dx
        })
    }
}

impl ParamSet for Linear {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Pre-activation residual block `h + outer(act(inner(act(h))))`, `d → d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualBlock {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone)]
pub struct BlockTape {
    h: Vec<f64>,
    u: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl ResidualBlock {
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        Self {
            inner: Linear::new(dim, dim, rng),
            outer: Linear::new(dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.in_dim()
    }

    pub fn forward_rows(&self, h: Vec<f64>, rows: usize, act: Activation) -> (Vec<f64>, BlockTape) {
        let u = act.apply_all(&h);
        let p = self.inner.forward_rows(&u, rows);
        let q = act.apply_all(&p);
        let r = self.outer.forward_rows(&q, rows);
        let out = h.iter().zip(&r).map(|(a, b)| a + b).collect();
        (out, BlockTape { h, u, p, q })
    }

    pub fn backward_rows(
        &self,
        tape: &BlockTape,
        rows: usize,
        dout: &[f64],
        grad: &mut ResidualBlock,
        act: Activation,
    ) -> Vec<f64> {
        let mut dq = self
            .outer
            .backward_rows(&tape.q, rows, dout, &mut grad.outer, true)
            .expect("input grad");
        act.chain(&mut dq, &tape.p);
        let mut du = self
            .inner
            .backward_rows(&tape.u, rows, &dq, &mut grad.inner, true)
            .expect("input grad");
        act.chain(&mut du, &tape.h);
        du.iter_mut().zip(dout).for_each(|(a, b)| *a += b);
        du
    }
}

impl ParamSet for ResidualBlock {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.inner.tensors();
        v.extend(self.outer.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.inner.tensors_mut();
        v.extend(self.outer.tensors_mut());
        v
    }
}

/// Stack of residual blocks of a common width, applied in order.
pub fn blocks_forward(
    blocks: &[ResidualBlock],
    mut h: Vec<f64>,
    rows: usize,
    act: Activation,
) -> (Vec<f64>, Vec<BlockTape>) {
    let mut tapes = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (out, tape) = b.forward_rows(h, rows, act);
        tapes.push(tape);
        h = out;
    }
    (h, tapes)
}

pub fn blocks_backward(
    blocks: &[ResidualBlock],
    tapes: &[BlockTape],
    rows: usize,
    mut grad: Vec<f64>,
    grads: &mut [ResidualBlock],
    act: Activation,
) -> Vec<f64> {
    for ((b, tape), g) in blocks.iter().zip(tapes).zip(grads.iter_mut()).rev() {
        grad = b.backward_rows(tape, rows, &grad, g, act);
    }
    grad
}

/// Dense layers with `activation` between consecutive layers (none after the
/// last), followed by `blocks` residual blocks on the output width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub blocks: Vec<ResidualBlock>,
    pub activation: Activation,
}

/// Intermediate values of one [`MlpParams::forward`] call.
#[derive(Debug, Clone)]
pub struct MlpTape {
    fingerprint: u64,
    rows: usize,
    out_shape: Vec<usize>,
    in_shape: Vec<usize>,
    layer_inputs: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<f64>>,
    block_tapes: Vec<BlockTape>,
}

impl MlpTape {
    pub fn output_shape(&self) -> &[usize] {
        &self.out_shape
    }
}

impl MlpParams {
    /// `dims = [in, h1, …, out]`; `blocks` residual blocks of width `out`.
    pub fn new(dims: &[usize], blocks: usize, activation: Activation, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let layers = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        let width = *dims.last().unwrap();
        let blocks = (0..blocks).map(|_| ResidualBlock::new(width, rng)).collect();
        Self {
            layers,
            blocks,
            activation,
        }
    }

    /// Checks that layer dimensions chain and blocks keep the output width.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return dim_err("mlp has no layers");
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return dim_err(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                ));
            }
        }
        let w = self.output_dim();
        for (k, b) in self.blocks.iter().enumerate() {
            if b.dim() != w || b.outer.out_dim() != w || b.inner.out_dim() != w {
                return dim_err(format!("residual block {k} is not {w}→{w}"));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, MlpTape)> {
        if input.cols() != self.input_dim() {
            return dim_err(format!(
                "input last axis {} but first layer expects {}",
                input.cols(),
                self.input_dim()
            ));
        }
        let rows = input.rows();
        let act = self.activation;
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(last);
        let mut h = input.data().to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward_rows(&h, rows);
            layer_inputs.push(h);
            h = if k < last {
                let a = act.apply_all(&z);
                pre_acts.push(z);
                a
            } else {
                z
            };
        }
        let (h, block_tapes) = blocks_forward(&self.blocks, h, rows, act);
        let mut out_shape = input.shape().to_vec();
        *out_shape.last_mut().unwrap() = self.output_dim();
        let output = Tensor::new(out_shape.clone(), h)?;
        Ok((
            output,
            MlpTape {
                fingerprint: self.fingerprint(),
                rows,
                out_shape,
                in_shape: input.shape().to_vec(),
                layer_inputs,
                pre_acts,
                block_tapes,
            },
        ))
    }

    /// Exact gradients of `⟨grad_output, output⟩` with respect to every
    /// parameter and the input.
    pub fn backward(&self, tape: &MlpTape, grad_output: &Tensor) -> Result<(MlpParams, Tensor)> {
        let mut grads = self.zeroed();
        let gi = self.backward_into(tape, grad_output, &mut grads)?;
        Ok((grads, gi))
    }

    /// Like [`backward`](Self::backward) but accumulates into `grads`.
    pub fn backward_into(
        &self,
        tape: &MlpTape,
        grad_output: &Tensor,
        grads: &mut MlpParams,
    ) -> Result<Tensor> {
        if tape.fingerprint != self.fingerprint() {
            return Err(Error::Tape(
                "tape was recorded with different parameters".into(),
            ));
        }
        if grad_output.shape() != tape.out_shape.as_slice() {
            return Err(Error::Tape(format!(
                "grad_output shape {:?} does not match taped output {:?}",
                grad_output.shape(),
                tape.out_shape
            )));
        }
        let rows = tape.rows;
        let act = self.activation;
        let mut g = blocks_backward(
            &self.blocks,
            &tape.block_tapes,
            rows,
            grad_output.data().to_vec(),
            &mut grads.blocks,
            act,
        );
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            if k < last {
                act.chain(&mut g, &tape.pre_acts[k]);
            }
            g = self.layers[k]
                .backward_rows(&tape.layer_inputs[k], rows, &g, &mut grads.layers[k], true)
                .expect("input grad");
        }
        Tensor::new(tape.in_shape.clone(), g)
    }

    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            h = (h ^ t.len() as u64).wrapping_mul(0x0100_0000_01b3);
            for v in t.data() {
                h = (h ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

impl ParamSet for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        v.extend(self.blocks.iter().flat_map(|b| b.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> =
            self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        v.extend(self.blocks.iter_mut().flat_map(|b| b.tensors_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, b: f64) -> MlpParams {
        MlpParams {
            layers: vec![Linear {
                weight: Tensor::matrix(1, 1, vec![w]),
                bias: Tensor::vector(vec![b]),
            }],
            blocks: vec![],
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn single_affine_layer() {
        for act in [Activation::Tanh, Activation::Silu] {
            let mut p = single(2.0, 1.0);
            p.activation = act;
            let (y, _) = p.forward(&Tensor::vector(vec![3.0])).unwrap();
            assert_eq!(y.data(), &[7.0]);
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut rng = Rng::new(1);
        let mut p = MlpParams::new(&[3, 5, 2], 0, Activation::Silu, &mut rng);
        p.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        let x = rng.sample_normal(&[4, 3]);
        let (y, _) = p.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_chain_rule() {
        let p = single(1.0, 0.0);
        let x = Tensor::vector(vec![0.7]);
        let (_, tape) = p.forward(&x).unwrap();
        let (g, gi) = p.backward(&tape, &Tensor::vector(vec![-1.5])).unwrap();
        assert_eq!(g.layers[0].weight.data(), &[-1.5 * 0.7]);
        assert_eq!(g.layers[0].bias.data(), &[-1.5]);
        assert_eq!(gi.data(), &[-1.5]);
    }

    #[test]
    fn zero_grad_output_gives_zero_grads() {
        let mut rng = Rng::new(2);
        let p = MlpParams::new(&[2, 4, 3], 1, Activation::Tanh, &mut rng);
        let x = rng.sample_normal(&[5, 2]);
        let (_, tape) = p.forward(&x).unwrap();
        let (g, gi) = p.backward(&tape, &Tensor::zeros(&[5, 3])).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(gi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let mut rng = Rng::new(3);
        let p = MlpParams::new(&[2, 4, 3], 0, Activation::Tanh, &mut rng);
        assert!(matches!(
            p.forward(&Tensor::zeros(&[5, 3])),
            Err(Error::Dimension(_))
        ));
        let (_, tape) = p.forward(&Tensor::zeros(&[5, 2])).unwrap();
        assert!(matches!(
            p.backward(&tape, &Tensor::zeros(&[4, 3])),
            Err(Error::Tape(_))
        ));
        let mut changed = p.clone();
        changed.layers[0].bias.data_mut()[0] += 1.0;
        assert!(matches!(
            changed.backward(&tape, &Tensor::zeros(&[5, 3])),
            Err(Error::Tape(_))
        ));
    }

    #[test]
    fn validate_catches_broken_chain() {
        let mut rng = Rng::new(4);
        let mut p = MlpParams::new(&[2, 4, 3], 1, Activation::Tanh, &mut rng);
        assert!(p.validate().is_ok());
        p.layers[1] = Linear::zeros(5, 3);
        assert!(p.validate().is_err());
    }

    #[test]
    fn rows_are_independent_of_batch() {
        let mut rng = Rng::new(5);
        let p = MlpParams::new(&[3, 64, 64, 2], 2, Activation::Silu, &mut rng);
        let x = rng.sample_normal(&[37, 3]);
        let (y, _) = p.forward(&x).unwrap();
        for i in [0, 17, 36] {
            let (yi, _) = p.forward(&Tensor::vector(x.row(i).to_vec())).unwrap();
            assert_eq!(yi.data(), y.row(i));
        }
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = Rng::new(6);
        let p = MlpParams::new(&[3, 8, 2], 1, Activation::Silu, &mut rng);
        let x = rng.sample_normal(&[4, 3]);
        assert_eq!(p.forward(&x).unwrap().0, p.forward(&x).unwrap().0);
    }
}
