//! Minimal reverse-mode differentiation over dense rank-1/rank-2 arrays,
//! plus Adam and the text checkpoint container.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod lstm;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{CheckpointError, CheckpointFile};
pub use lstm::lstm_cell;
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Activation, Tape, Var, PROB_FLOOR};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutogradError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("mask of length {mask} applied to length {len}")]
    MaskLength { len: usize, mask: usize },
    #[error("masked softmax over an all-invalid mask")]
    EmptyMask,
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("probabilities do not form a distribution (sum {sum})")]
    NotADistribution { sum: f64 },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("gradient layout has {found} tensors, parameters have {expected}")]
    GradientLayout { expected: usize, found: usize },
}

#[cfg(test)]
mod tests;
