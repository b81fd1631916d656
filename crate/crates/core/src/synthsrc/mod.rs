//! Synthetic (label, image) sources.
//!
//! Generative models are represented only by their interfaces: a mask
//! source and a label-to-image renderer. [`gen_phantom_mask`] and
//! [`render_intensity`] implement both procedurally, [`ingest_external`]
//! accepts masks and images produced elsewhere, and [`range_encode`] /
//! [`range_decode`] convert between label values and a generator's
//! continuous `[-1, 1]` range.

mod files;
mod phantom;
mod range;

use std::io;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::volio::VolioError;

pub use files::{gen_pair, gen_synth_dataset, ingest_external, SYNTH_SOURCE};
pub use phantom::{gen_phantom_mask, render_intensity, PhantomParams, Range};
pub use range::{range_decode, range_encode, DynamicRange};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("value {value} outside dynamic range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("validation failed for {} file(s):\n{}", .0.len(), .0.join("\n"))]
    Validation(Vec<String>),
    #[error(transparent)]
    Volio(#[from] VolioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;
