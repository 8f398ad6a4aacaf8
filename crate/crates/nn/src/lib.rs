//! A deliberately small autodiff engine: just the operations the channel
//! estimation CNNs need (same-padded 2D/3D convolution, GELU, channel
//! concatenation, MSE with L2 penalty) plus AdamW and checkpoint I/O.

pub mod activation;
pub mod checkpoint;
pub mod conv;
pub mod graph;
pub mod model;
pub mod optim;
pub mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use conv::{conv_backward, conv_forward, ConvGrads};
pub use graph::{Graph, Var};
pub use model::{
    build_2du, build_3dff, count_macs, Activation, Connectivity, ConvLayer, LayerSpec, Model,
    ModelSpec, ParamVars, Skip, SkipKind,
};
pub use optim::{AdamWConfig, OptimState};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("channel mismatch: layer expects {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("node {0} was never recorded on this graph")]
    NotRecorded(usize),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
