//! Z-score quality control for synthetic label masks.
//!
//! Per-pixel mean and population standard deviation are taken over a
//! reference set of real masks. A candidate mask is standardized pixelwise
//! against them and discarded when the Euclidean norm of the result exceeds
//! a threshold. Label values are standardized directly, without one-hot
//! expansion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabelMask;

/// Floor on the per-pixel standard deviation.
pub const Z_EPS: f64 = 1e-8;

pub const DEFAULT_THRESHOLD: f64 = 500.0;

#[derive(Debug, Error)]
pub enum QcError {
    #[error("need at least 2 reference masks, got {0}")]
    TooFewReferences(usize),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
}

pub type Result<T> = std::result::Result<T, QcError>;

/// Per-pixel reference statistics, row-major `height x width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelStats {
    pub width: usize,
    pub height: usize,
    pub mean_map: Vec<f64>,
    pub std_map: Vec<f64>,
    pub n_ref: usize,
}

/// Mean and population standard deviation of every pixel over the batch.
///
/// Sums of values and squares are exact integers, so the result does not
/// depend on the order of the reference set.
pub fn batch_pixel_stats(real_masks: &[LabelMask]) -> Result<PixelStats> {
    if real_masks.len() < 2 {
        return Err(QcError::TooFewReferences(real_masks.len()));
    }
    let dims = (real_masks[0].width, real_masks[0].height);
    let len = dims.0 * dims.1;
    let mut s1 = vec![0u64; len];
    let mut s2 = vec![0u64; len];
    for m in real_masks {
        check_dims(dims, m)?;
        for ((a, b), &v) in s1.iter_mut().zip(s2.iter_mut()).zip(&m.labels) {
            let v = v as u64;
            *a += v;
            *b += v * v;
        }
    }
    let n = real_masks.len() as u128;
    let nf = n as f64;
    let mut mean_map = Vec::with_capacity(len);
    let mut std_map = Vec::with_capacity(len);
    for (&a, &b) in s1.iter().zip(&s2) {
        // n^2 var = n Σx² - (Σx)², exact in integers.
        let n2var = n * b as u128 - (a as u128) * (a as u128);
        mean_map.push(a as f64 / nf);
        std_map.push((n2var as f64).sqrt() / nf);
    }
    Ok(PixelStats {
        width: dims.0,
        height: dims.1,
        mean_map,
        std_map,
        n_ref: real_masks.len(),
    })
}

fn check_dims(expected: (usize, usize), m: &LabelMask) -> Result<()> {
    let got = (m.width, m.height);
    if got != expected {
        return Err(QcError::Shape { expected, got });
    }
    Ok(())
}

/// Euclidean norm of the pixelwise Z-score image.
pub fn zscore_norm(mask: &LabelMask, stats: &PixelStats) -> Result<f64> {
    check_dims((stats.width, stats.height), mask)?;
    let sq: f64 = mask
        .labels
        .iter()
        .zip(stats.mean_map.iter().zip(&stats.std_map))
        .map(|(&v, (&mu, &sd))| {
            let z = (v as f64 - mu) / sd.max(Z_EPS);
            z * z
        })
        .sum();
    Ok(sq.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QCReport {
    pub kept: Vec<String>,
    pub discarded: Vec<(String, f64)>,
    pub threshold: f64,
    pub discarded_fraction: f64,
}

/// Keeps a mask iff its Z-score norm is at most `threshold`. Input order is
/// preserved in both lists.
pub fn filter_dataset<S: AsRef<str>>(
    synth_masks: &[(S, LabelMask)],
    stats: &PixelStats,
    threshold: f64,
) -> Result<QCReport> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(QcError::Threshold(threshold));
    }
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for (id, m) in synth_masks {
        let norm = zscore_norm(m, stats)?;
        if norm <= threshold {
            kept.push(id.as_ref().to_string());
        } else {
            discarded.push((id.as_ref().to_string(), norm));
        }
    }
    let total = synth_masks.len();
    Ok(QCReport {
        kept,
        discarded_fraction: if total == 0 {
            0.0
        } else {
            discarded.len() as f64 / total as f64
        },
        discarded,
        threshold,
    })
}
