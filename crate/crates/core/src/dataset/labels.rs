use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};
use crate::unet::Tensor4;
use crate::volio::{Slice2D, SliceKind};

/// Classes in the source annotations: background, necrotic/non-enhancing
/// core, edema, enhancing tumor, white matter, gray matter, CSF.
pub const N_SOURCE_CLASSES: usize = 7;

/// Additive guard in the inverse-frequency class weights.
pub const CLASS_WEIGHT_EPS: f64 = 1.0;

/// Row-major integer class map.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width * height != labels.len() || labels.is_empty() {
            return Err(DatasetError::Shape(format!(
                "{width}x{height} mask with {} labels",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn from_slice(slice: &Slice2D) -> Result<Self> {
        if slice.kind != SliceKind::Mask8 {
            return Err(DatasetError::Shape(format!("expected an 8-bit mask, got {}", slice.kind)));
        }
        Self::new(
            slice.width,
            slice.height,
            slice.pixels.iter().map(|&v| v as u8).collect(),
        )
    }

    pub fn to_slice(&self) -> Slice2D {
        Slice2D {
            width: self.width,
            height: self.height,
            pixels: self.labels.iter().map(|&v| u16::from(v)).collect(),
            kind: SliceKind::Mask8,
            origin: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(|&v| v == 0)
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// Total map from source classes `0..7` onto `0..n_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub n_classes: usize,
    pub mapping: [u8; N_SOURCE_CLASSES],
}

impl ClassScheme {
    /// Full tissue + tumor labels.
    pub const SEVEN: ClassScheme = ClassScheme {
        n_classes: 7,
        mapping: [0, 1, 2, 3, 4, 5, 6],
    };
    /// Tumor sub-regions only; healthy tissue becomes background.
    pub const FOUR: ClassScheme = ClassScheme {
        n_classes: 4,
        mapping: [0, 1, 2, 3, 0, 0, 0],
    };
    /// Tumor vs. everything else.
    pub const TWO: ClassScheme = ClassScheme {
        n_classes: 2,
        mapping: [0, 1, 1, 1, 0, 0, 0],
    };

    pub fn for_classes(n: usize) -> Result<Self> {
        match n {
            7 => Ok(Self::SEVEN),
            4 => Ok(Self::FOUR),
            2 => Ok(Self::TWO),
            _ => Err(DatasetError::ClassCount(n)),
        }
    }
}

/// Applies `scheme` pixelwise. Input labels must lie in `0..7`.
pub fn remap_classes(mask: &LabelMask, scheme: &ClassScheme) -> Result<LabelMask> {
    let labels = mask
        .labels
        .iter()
        .map(|&v| {
            scheme
                .mapping
                .get(v as usize)
                .copied()
                .ok_or(DatasetError::InvalidLabel {
                    value: u16::from(v),
                    limit: N_SOURCE_CLASSES,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelMask {
        labels,
        ..mask.clone()
    })
}

/// Drops all-background masks and reports the discarded fraction.
pub fn filter_empty(masks: Vec<LabelMask>) -> (Vec<LabelMask>, f64) {
    filter_empty_by(masks, LabelMask::is_empty)
}

pub fn filter_empty_by<T>(items: Vec<T>, is_empty: impl Fn(&T) -> bool) -> (Vec<T>, f64) {
    let n = items.len();
    let kept: Vec<T> = items.into_iter().filter(|m| !is_empty(m)).collect();
    let frac = if n == 0 {
        0.0
    } else {
        (n - kept.len()) as f64 / n as f64
    };
    (kept, frac)
}

/// `(1, C, H, W)` indicator tensor of `mask`.
pub fn one_hot(mask: &LabelMask, n_classes: usize) -> Result<Tensor4> {
    let hw = mask.width * mask.height;
    let mut t = Tensor4::zeros(1, n_classes, mask.height, mask.width);
    for (i, &v) in mask.labels.iter().enumerate() {
        let c = v as usize;
        if c >= n_classes {
            return Err(DatasetError::InvalidLabel {
                value: u16::from(v),
                limit: n_classes,
            });
        }
        t.data[c * hw + i] = 1.0;
    }
    Ok(t)
}

/// Per-pixel argmax over channels of sample `n`; ties go to the lowest
/// class index.
pub fn argmax_decode(t: &Tensor4, n: usize) -> LabelMask {
    let hw = t.h * t.w;
    let s = t.sample(n);
    let labels = (0..hw)
        .map(|i| {
            let mut best = 0;
            for c in 1..t.c {
                if s[c * hw + i] > s[best * hw + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMask {
        width: t.w,
        height: t.h,
        labels,
    }
}

/// Per-class loss weights, normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        Self {
            w: vec![1.0 / n_classes as f64; n_classes],
        }
    }

    /// Inverse-frequency weights `w_c ∝ 1 / (n_c + CLASS_WEIGHT_EPS)` from
    /// per-class pixel counts.
    pub fn from_counts(counts: &[u64]) -> Self {
        let inv: Vec<f64> = counts
            .iter()
            .map(|&n| 1.0 / (n as f64 + CLASS_WEIGHT_EPS))
            .collect();
        let total: f64 = inv.iter().sum();
        Self {
            w: inv.into_iter().map(|x| x / total).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub fn compute_class_weights<'a>(
    masks: impl IntoIterator<Item = &'a LabelMask>,
    n_classes: usize,
) -> Result<ClassWeights> {
    let mut counts = vec![0u64; n_classes];
    for m in masks {
        for &v in &m.labels {
            *counts.get_mut(v as usize).ok_or(DatasetError::InvalidLabel {
                value: u16::from(v),
                limit: n_classes,
            })? += 1;
        }
    }
    Ok(ClassWeights::from_counts(&counts))
}
