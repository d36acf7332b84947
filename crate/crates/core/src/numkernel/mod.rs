//! Dense `f64` arrays, layer kernels, reverse-mode differentiation and the
//! AMSGrad optimizer.

mod array;
pub mod backend;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
mod ops;
pub mod optim;
mod simd;

pub use array::Array;
pub use backend::{Backend, EvalBackend, TapeBackend};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use kernels::{NormLayout, NormStatistics, Padding, PROB_FLOOR};
pub use ops::{
    activation, batch_norm, conv1d, masked_cross_entropy, pool_avg, softmax, upsample_nn, Activation,
    NormAxis, NormMode, RunningStats, BN_EPS, BN_MOMENTUM,
};
pub use optim::{AmsGradConfig, OptimizerState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate batch: normalization axis has {0} element(s), need at least 2")]
    DegenerateBatch(usize),
    #[error("empty loss: every label is masked")]
    EmptyLoss,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("probability row {row} sums to {sum}")]
    InvalidProbabilities { row: usize, sum: f64 },
}
