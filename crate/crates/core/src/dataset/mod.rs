//! Datasets of (MR, mask) slice pairs: manifests, splits, label schemes,
//! normalization statistics, class weights and real/synthetic mixing.

mod labels;
mod load;
mod manifest;
mod norm;
mod split;

use std::io;

use thiserror::Error;

use crate::volio::VolioError;

pub use labels::{
    argmax_decode, compute_class_weights, filter_empty, filter_empty_by, one_hot, remap_classes,
    ClassScheme, ClassWeights, LabelMask, CLASS_WEIGHT_EPS, N_SOURCE_CLASSES,
};
pub use load::{load_masks, load_pairs, Sample};
pub use manifest::{read_json, write_json, Entry, Manifest, Provenance, SplitTag};
pub use norm::{compute_norm_stats, normalize, NormStats};
pub use split::{mix, split, split_by_volume, take_fraction, Ratios};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error("fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("need {need} {what} entries, only {have} available")]
    Size {
        what: &'static str,
        need: usize,
        have: usize,
    },
    #[error("invalid label {value} (allowed 0..{limit})")]
    InvalidLabel { value: u16, limit: usize },
    #[error("unsupported class count {0} (expected 2, 4 or 7)")]
    ClassCount(usize),
    #[error("degenerate statistics: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Volio(#[from] VolioError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;
