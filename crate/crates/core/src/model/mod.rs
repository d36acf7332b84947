//! Channel-attention U-Net: configuration, parameters, forward pass,
//! attention inspection and checkpoints.

mod attention;
mod checkpoint;
mod config;
mod network;
mod params;

pub use attention::{attention_fuse, extract_attention_trace, AttentionModule, AttentionTrace};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{
    check_resolution, filter_schedule, ChannelEncoderConfig, Fusion, ModelConfig, EPOCH_SAMPLES, RESOLUTIONS,
};
pub use network::{
    classify, forward, forward_features, forward_multi, predict_chunked, receptive_field, ChunkOptions, Features,
    Mode, StageProbabilities,
};
pub use params::{
    count_attention_parameters, count_parameters, norm_layers, parameter_layout, NormUpdate, ParamKind, ParamSpec,
    Parameters,
};

use crate::numkernel::KernelError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unsupported resolution {0}; expected one of {RESOLUTIONS:?}")]
    UnsupportedResolution(usize),
    #[error("alignment error: {samples} samples is not a positive multiple of {required_multiple}")]
    Alignment { samples: usize, required_multiple: usize },
    #[error("empty-channel error: at least one input channel is required")]
    EmptyChannels,
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
