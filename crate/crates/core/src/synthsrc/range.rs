use serde::{Deserialize, Serialize};

use super::{Result, SynthError};
use crate::dataset::LabelMask;

/// Affine correspondence between label values `[lo, hi]` and `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicRange {
    pub lo: f64,
    pub hi: f64,
}

impl DynamicRange {
    /// The seven source classes.
    pub const LABELS: DynamicRange = DynamicRange { lo: 0.0, hi: 6.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(SynthError::Params(format!("dynamic range [{lo}, {hi}] is empty")));
        }
        Ok(Self { lo, hi })
    }

    fn check(&self, v: f64) -> Result<()> {
        if v < self.lo || v > self.hi {
            return Err(SynthError::Range {
                value: v,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }
}

/// `t = 2 (v - lo) / (hi - lo) - 1` per pixel.
pub fn range_encode(mask: &LabelMask, range: DynamicRange) -> Result<Vec<f64>> {
    mask.labels
        .iter()
        .map(|&v| {
            let v = v as f64;
            range.check(v)?;
            Ok(2.0 * (v - range.lo) / (range.hi - range.lo) - 1.0)
        })
        .collect()
}

/// Rounds `(t + 1)(hi - lo) / 2 + lo` to the nearest label, clamped to the
/// range. Non-finite values decode to `lo`.
pub fn range_decode(values: &[f64], width: usize, height: usize, range: DynamicRange) -> Result<LabelMask> {
    if range.lo < 0.0 || range.hi > u8::MAX as f64 {
        return Err(SynthError::Params(format!(
            "dynamic range [{}, {}] does not fit 8-bit labels",
            range.lo, range.hi
        )));
    }
    let (lo, hi) = (range.lo.ceil(), range.hi.floor());
    let labels = values
        .iter()
        .map(|&t| {
            let v = ((t + 1.0) * (range.hi - range.lo) / 2.0 + range.lo).round();
            if v.is_nan() {
                lo as u8
            } else {
                v.clamp(lo, hi) as u8
            }
        })
        .collect();
    Ok(LabelMask::new(width, height, labels)?)
}
