//! A from-scratch U-Net for slice segmentation.
//!
//! The encoder has `n_levels` levels of two 3x3 convolutions joined by 2x2
//! max pooling; a bridge convolution is followed by a stride-2 transposed
//! convolution; each decoder level concatenates the up-sampled features
//! with the matching encoder output and applies two more convolutions.
//! Every convolution and transposed convolution is followed by batch
//! normalization and ReLU. A final 1x1 convolution and a channel softmax
//! give per-pixel class probabilities.
//!
//! All arithmetic is `f64`. Forward and backward passes are explicit and
//! verified against finite differences (see [`gradcheck`]).

mod adam;
mod checkpoint;
mod gemm;
pub mod gradcheck;
mod init;
pub mod layers;
mod loss;
mod model;
mod params;
mod tensor;
mod train;

use std::io;

use thiserror::Error;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::Checkpoint;
pub use init::he_normal_init;
pub use loss::{weighted_dice_loss, DiceSums, DICE_EPS};
pub use model::{Mode, UNet, UNetConfig};
pub use params::{NamedArray, ParamSet};
pub use tensor::Tensor4;
pub use train::{
    dice_sums, evaluate, predict, predict_slice, prepare, train, train_with, EpochLog, EvalResult, Prepared,
    TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum UnetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("backward called without a cached training-mode forward pass")]
    MissingCache,
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, UnetError>;
