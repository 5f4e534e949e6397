//! Dense arithmetic, the tape-based gradient engine, Adam, and the seeded
//! random source.

mod adam;
mod gradcheck;
pub mod hexfloat;
mod mlp;
mod rng;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{central_difference, grad_check, GRAD_FLOOR};
pub use mlp::{
    blocks_backward, blocks_forward, sigmoid, softplus, Activation, BlockTape, Linear, MlpParams,
    MlpTape, ResidualBlock,
};
pub use rng::{Rng, RngState};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;

/// A collection of parameter tensors visited in a fixed order.
///
/// Gradients share the type of the parameters they belong to, so anything
/// implementing this trait can be driven by [`AdamState`] and flattened for
/// finite-difference checks.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length");
    }

    /// Same structure with every entry set to zero.
    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// Element-wise `self += other`.
    fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data_mut()
                .iter_mut()
                .zip(b.data())
                .for_each(|(x, y)| *x += y);
        }
    }

    fn scale_all(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}
