use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub hyper: AdamConfig,
}

impl AdamState {
    pub fn new<P: ParamSet>(hyper: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            hyper,
        }
    }

    /// Applies one update. Non-finite gradients or mismatched shapes leave
    /// both the parameters and the state untouched.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be > 0")));
        }
        let g = grads.tensors();
        if g.len() != self.first_moment.len() {
            return dim_err("gradient set does not match optimizer state");
        }
        for (gt, m) in g.iter().zip(&self.first_moment) {
            gt.same_shape(m)?;
            gt.ensure_finite()?;
        }
        let mut p = params.tensors_mut();
        if p.len() != g.len() || p.iter().zip(&g).any(|(a, b)| a.shape() != b.shape()) {
            return dim_err("parameter set does not match gradients");
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, param) in p.iter_mut().enumerate() {
            let gd = g[k].data();
            let m = self.first_moment[k].data_mut();
            let v = self.second_moment[k].data_mut();
            for (i, w) in param.data_mut().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gd[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * gd[i] * gd[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
