//! Small reverse-mode differentiation engine over dense 2-D tensors.
//!
//! Operations are recorded on a [`Tape`]; [`Tape::grad`] walks it backwards.
//! Backward rules are expressed with the same recorded operations, so
//! gradients can be differentiated again (needed by the critic's gradient
//! penalty).

mod gradcheck;
mod optim;
mod tape;
mod tensor;


use std::fmt::Debug;

use thiserror::Error;

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Floating-point element type of tensors.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + Debug + Default + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("data of length {len} does not fit shape {shape:?}")]
    DataLength { shape: [usize; 2], len: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("loss must be a 1x1 scalar, got shape {shape:?}")]
    NonScalarLoss { shape: [usize; 2] },
    #[error("{op} needs at least two rows, got {rows}")]
    TooFewRows { op: &'static str, rows: usize },
    #[error("function value is not finite")]
    NonFinite,
}

/// Convert an `f64` literal to the working precision.
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}
