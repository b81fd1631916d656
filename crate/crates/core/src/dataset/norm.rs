use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

/// Intensity scaling fitted on the training images: divide by the training
/// maximum, then subtract the mean of the scaled training pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scale_max: f64,
    pub mean_after_scale: f64,
}

/// Fits [`NormStats`] over every pixel of the given images. Sums are taken
/// in integer arithmetic, so the result does not depend on image order.
pub fn compute_norm_stats<'a>(images: impl IntoIterator<Item = &'a [u16]>) -> Result<NormStats> {
    let mut max = 0u16;
    let mut sum = 0u128;
    let mut count = 0u128;
    for img in images {
        for &p in img {
            max = max.max(p);
            sum += u128::from(p);
        }
        count += img.len() as u128;
    }
    if count == 0 {
        return Err(DatasetError::Empty("no training pixels".into()));
    }
    if max == 0 {
        return Err(DatasetError::Degenerate("all training pixels are zero".into()));
    }
    let scale_max = f64::from(max);
    Ok(NormStats {
        scale_max,
        mean_after_scale: (sum as f64 / scale_max) / count as f64,
    })
}

pub fn normalize(image: &[u16], stats: &NormStats) -> Vec<f64> {
    image
        .iter()
        .map(|&p| f64::from(p) / stats.scale_max - stats.mean_after_scale)
        .collect()
}
