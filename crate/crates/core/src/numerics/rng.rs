//! Seeded random source.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) keyed with
//! `seed_from_u64(seed)` and addressed by a 64-bit stream id, so independent
//! sub-streams (per trajectory, per purpose) come from one master seed.
//!
//! * uniform: the top 53 bits of one `next_u64`, scaled by 2⁻⁵³, giving
//!   values on `[0, 1)`.
//! * normal: Marsaglia's polar method on two uniforms mapped to `(-1, 1)`;
//!   the second variate of each accepted pair is cached and returned by the
//!   next call. The cache is part of the serialized state.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::Tensor;

const INV_2_POW_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

/// Serializable snapshot of an [`Rng`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub algorithm: String,
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position, decimal (exceeds JSON's integer range).
    pub word_pos: String,
    #[serde(with = "super::hexfloat::serde_opt")]
    pub spare: Option<f64>,
}

pub const ALGORITHM: &str = "chacha8-polar";

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            inner,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * INV_2_POW_53
    }

    /// Standard normal.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    /// Uniform integer in `0..n`. Uses the multiply-shift reduction on one
    /// 64-bit draw (bias below 2⁻³² for the dataset sizes used here).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn sample_normal(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.normal()).collect();
        Tensor::new(shape.to_vec(), data).expect("finite normals")
    }

    pub fn sample_uniform(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.uniform()).collect();
        Tensor::new(shape.to_vec(), data).expect("finite uniforms")
    }

    pub fn state(&self) -> RngState {
        RngState {
            algorithm: ALGORITHM.into(),
            seed: self.seed,
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos().to_string(),
            spare: self.spare,
        }
    }

    pub fn from_state(state: &RngState) -> crate::Result<Self> {
        if state.algorithm != ALGORITHM {
            return Err(crate::Error::Checkpoint(format!(
                "unsupported rng algorithm `{}`",
                state.algorithm
            )));
        }
        let word_pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| crate::Error::Checkpoint("bad rng word position".into()))?;
        let mut rng = Self::with_stream(state.seed, state.stream);
        rng.inner.set_word_pos(word_pos);
        rng.spare = state.spare;
        Ok(rng)
    }
}
