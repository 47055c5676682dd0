//! Reverse-mode gradients for the VAE computation graphs, dense layers and
//! the Adam optimizer.

mod adam;
pub mod gradcheck;
mod mlp;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{chain_specs, forward_mlp, Activation, LayerSpec, Mlp, MlpForward};
pub use params::{GradSet, ParamId, ParamSet};
pub use tape::{NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("parameter `{0}` already registered")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` has non-finite entries")]
    NonFiniteParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("input width {got} does not match expected {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("incompatible shapes in {op}: {left:?} vs {right:?}")]
    NodeShape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("non-finite value at node {node} ({kind}) during {phase} pass")]
    NonFinite {
        node: usize,
        kind: &'static str,
        phase: &'static str,
    },
    #[error("non-finite network output at index {index}")]
    NonFiniteOutput { index: usize },
    #[error("loss node must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("gradient/optimizer layout does not match parameters")]
    LayoutMismatch,
}
