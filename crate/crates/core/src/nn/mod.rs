//! Dense linear algebra and differentiable layers, all in `f64`.

pub mod activation;
pub mod layer;
pub mod matrix;
pub mod param;

use thiserror::Error;

pub use activation::{relu, sigmoid, softmax, softmax_backward, tanh};
pub use layer::{Activation, Dense, Layer, LayerTape, Softmax};
pub use matrix::Matrix;
pub use param::{fan_in_uniform, glorot_uniform, ParamTensor};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: {}x{} vs {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected length {expected}, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("tape already consumed by a previous backward call")]
    TapeReused,
}
