//! Differentiable layers with explicit forward and backward passes.
//!
//! Every `forward` returns the output together with a context holding what the
//! matching `backward` needs. Contexts are consumed by `backward`, so each one
//! can be used at most once. All feature maps use the `[batch, channels, time]`
//! layout; recurrent layers take `[batch, time, features]`.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;
mod recurrent;

pub use activation::{relu, relu_backward, ReluContext};
pub use batchnorm::{BatchNorm, BatchNormContext, BatchNormGrads};
pub use conv::{Conv1d, Conv1dContext, Conv1dGrads};
pub use dense::{Dense, DenseContext, DenseGrads};
pub use dropout::{Dropout, DropoutContext};
pub use pool::{maxpool1d_backward, maxpool1d_forward, MaxPoolContext};
pub use recurrent::{
    LstmGrads, LstmLayer, LstmSequenceContext, LstmSequenceGrads, LstmStepContext, LstmStepGrads,
    RnnGrads, RnnLayer, RnnSequenceContext, RnnSequenceGrads,
};

use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Glorot/Xavier uniform: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.uniform_range(-limit, limit))
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::rng::RngStream;
    use crate::tensor::Tensor;

    pub fn rand_tensor(shape: &[usize], rng: &mut RngStream) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
    }

    /// Random dimension in `1..=max`.
    pub fn dim(rng: &mut RngStream, max: usize) -> usize {
        1 + rng.index(max)
    }

    /// Scalar probe `sum(w * y)` used to turn a tensor output into a loss.
    pub fn project(y: &Tensor, w: &Tensor) -> f64 {
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }
}
