//! A small from-scratch training engine for binarized convnets.
//!
//! Forward passes use `±1` weights and activations inside the binarized
//! blocks while the real-valued weights receive the gradients.

mod layers;
mod model;
mod stats;
mod tensor;
mod train;

use thiserror::Error;

pub use layers::{
    activation_grad_mask, argmax, batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train,
    conv2d_backward, conv2d_forward, global_avg_pool, global_avg_pool_backward, linear_backward, linear_forward,
    sign_activation, sign_surrogate_grad, softmax_cross_entropy, ste_weight_grad, BnCache, ConvCache, BN_EPS,
};
pub use model::{
    binarize_layer_forward, binarized_conv_forward, ArchSpec, BinarizedConv, ForwardCache, Gradients, LayerKind,
    LayerRecord, NetworkState, WeightBinarizer, BN_MOMENTUM,
};
pub use stats::{filter_stats, layer_stats, LayerStats};
pub use tensor::Tensor;
pub use train::{
    arch_for, cosine_lr, derive_seed, evaluate, sgd_step, train, train_state, EpochMetrics, Schedule, Sgd,
    TrainConfig, TrainMode, TrainOutcome,
};

use crate::binarize::BinarizeError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient or parameter")]
    NonFiniteGradient,
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("dataset is empty")]
    DatasetEmpty,
    #[error(transparent)]
    Binarize(#[from] BinarizeError),
}
