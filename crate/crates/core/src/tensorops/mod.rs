//! Differentiable operators over rank-4 tensors.
//!
//! The free functions here are value-level conveniences; they record onto a
//! throwaway [`Tape`] so their semantics are identical to the differentiable
//! path used by the networks.

pub mod conv;
pub mod tape;
pub mod tensor;

pub use conv::{conv2d, conv2d_transpose, ConvGeometry, ConvParams};
pub use tape::{BatchNormConfig, Gradients, Mode, Tape, Var};
pub use tensor::{Shape, Tensor};

use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = match kind {
        Activation::Relu => tape.relu(v),
        Activation::Sigmoid => tape.sigmoid(v),
    }
    .expect("elementwise op on a fresh tape");
    tape.value(y).clone()
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.global_avg_pool(v)?;
    Ok(tape.value(y).clone())
}

/// Running estimates carried by a batch-norm layer between calls.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mode: Mode,
    stats: &mut RunningStats<T>,
    cfg: BatchNormConfig,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::from_vec(Shape::new(1, gamma.len(), 1, 1), gamma.to_vec())?);
    let b = tape.constant(Tensor::from_vec(Shape::new(1, beta.len(), 1, 1), beta.to_vec())?);
    let y = tape.batch_norm(xv, g, b, &mut stats.mean, &mut stats.var, mode, cfg)?;
    Ok(tape.value(y).clone())
}
