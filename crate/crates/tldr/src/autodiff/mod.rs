//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! The engine supports exactly the primitives the rest of the crate needs.
//! Typed functions ([`ops`], [`conv`], [`loss`]) are the working API;
//! [`apply`] exposes the same primitives behind a uniform kind + attribute
//! surface. Recording is scoped: create a [`Tape`], [`watch`] the tensors
//! that need gradients, run forward math, then call [`backward`] on a scalar
//! loss. Tapes are thread-confined and discarded after one backward pass; no
//! higher-order gradients. All math is f64 and single-threaded, so identical
//! inputs produce bitwise-identical outputs.

pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod ops;
pub mod serialize;
mod tape;
mod tensor;

pub use loss::cross_entropy;
pub use tape::{backward, is_recording, watch, GradientMap, Tape};
pub use tensor::{NodeRef, Tensor};

use crate::{Error, Result};

/// The closed set of differentiable primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimitiveKind {
    Conv2d,
    Relu,
    MaxPool2,
    AvgPool2,
    BilinearUpsample,
    Matmul,
    BatchedMatmul,
    Transpose,
    Add,
    Sub,
    MulElementwise,
    ScalarMul,
    Sum,
    Mean,
    FrobeniusNorm,
    Reshape,
}

/// Attributes consumed by [`apply`]; each kind reads only the fields it
/// needs.
#[derive(Clone, Debug)]
pub struct Attrs {
    pub stride: usize,
    pub pad: usize,
    pub scale: usize,
    pub factor: f64,
    pub shape: Vec<usize>,
}

impl Default for Attrs {
    fn default() -> Self {
        Attrs {
            stride: 1,
            pad: 0,
            scale: 2,
            factor: 1.0,
            shape: Vec::new(),
        }
    }
}

fn arity(kind: PrimitiveKind, inputs: &[&Tensor], expect: std::ops::RangeInclusive<usize>) -> Result<()> {
    if expect.contains(&inputs.len()) {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "{kind:?} takes {expect:?} inputs, got {}",
            inputs.len()
        )))
    }
}

/// Apply a primitive by kind, recording it on the active tape when any input
/// is tracked.
pub fn apply(kind: PrimitiveKind, inputs: &[&Tensor], attrs: &Attrs) -> Result<Tensor> {
    use PrimitiveKind::*;
    match kind {
        Conv2d => {
            arity(kind, inputs, 2..=3)?;
            conv::conv2d(
                inputs[0],
                inputs[1],
                inputs.get(2).copied(),
                attrs.stride,
                attrs.pad,
            )
        }
        Relu => {
            arity(kind, inputs, 1..=1)?;
            ops::relu(inputs[0])
        }
        MaxPool2 => {
            arity(kind, inputs, 1..=1)?;
            conv::max_pool2(inputs[0])
        }
        AvgPool2 => {
            arity(kind, inputs, 1..=1)?;
            conv::avg_pool2(inputs[0])
        }
        BilinearUpsample => {
            arity(kind, inputs, 1..=1)?;
            conv::bilinear_upsample(inputs[0], attrs.scale)
        }
        Matmul => {
            arity(kind, inputs, 2..=2)?;
            ops::matmul(inputs[0], inputs[1])
        }
        BatchedMatmul => {
            arity(kind, inputs, 2..=2)?;
            ops::batched_matmul(inputs[0], inputs[1])
        }
        Transpose => {
            arity(kind, inputs, 1..=1)?;
            ops::transpose(inputs[0])
        }
        Add => {
            arity(kind, inputs, 2..=2)?;
            ops::add(inputs[0], inputs[1])
        }
        Sub => {
            arity(kind, inputs, 2..=2)?;
            ops::sub(inputs[0], inputs[1])
        }
        MulElementwise => {
            arity(kind, inputs, 2..=2)?;
            ops::mul(inputs[0], inputs[1])
        }
        ScalarMul => {
            arity(kind, inputs, 1..=1)?;
            ops::scalar_mul(inputs[0], attrs.factor)
        }
        Sum => {
            arity(kind, inputs, 1..=1)?;
            ops::sum(inputs[0])
        }
        Mean => {
            arity(kind, inputs, 1..=1)?;
            ops::mean(inputs[0])
        }
        FrobeniusNorm => {
            arity(kind, inputs, 1..=1)?;
            ops::frobenius_norm(inputs[0])
        }
        Reshape => {
            arity(kind, inputs, 1..=1)?;
            ops::reshape(inputs[0], &attrs.shape)
        }
    }
}
