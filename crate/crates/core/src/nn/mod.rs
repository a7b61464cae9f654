//! Small differentiable-network substrate: tensors, a layer vocabulary
//! (convolution, max-pool, fully connected, rectifier), reverse-mode gradients,
//! optimizers and checkpoints.

pub mod checkpoint;
mod network;
mod optim;
mod params;
mod spec;
mod tensor;

pub use network::{ForwardTrace, Network};
pub use optim::{opt_step, OptimConfig, UpdateRule};
pub use params::{Gradients, Moments, Params};
pub use spec::{Activation, LayerSpec, NetSpec};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("configuration error{}: {msg}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Config { layer: Option<usize>, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl NnError {
    pub(crate) fn config(layer: Option<usize>, msg: String) -> Self {
        NnError::Config { layer, msg }
    }
}
