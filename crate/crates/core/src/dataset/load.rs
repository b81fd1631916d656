use super::{remap_classes, ClassScheme, DatasetError, LabelMask, Manifest, Result};
use crate::volio::{read_png, Slice2D, SliceKind, VolioError};

/// An MR slice with its remapped label mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Slice2D,
    pub mask: LabelMask,
}

/// Loads every (MR, mask) pair of a manifest and applies `scheme` to the
/// masks. Entries without an MR image are rejected.
pub fn load_pairs(manifest: &Manifest, scheme: &ClassScheme) -> Result<Vec<Sample>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let mr_path = e.mr.as_ref().ok_or_else(|| {
                DatasetError::Shape(format!("entry {} has no MR image", e.mask.display()))
            })?;
            let image = read_png(mr_path)?;
            if image.kind != SliceKind::Mr16 {
                return Err(VolioError::Unsupported(format!(
                    "{} is not a 16-bit MR slice",
                    mr_path.display()
                ))
                .into());
            }
            let mask = remap_classes(&read_mask(&e.mask)?, scheme)?;
            if (mask.height, mask.width) != (image.height, image.width) {
                return Err(DatasetError::Shape(format!(
                    "{} is {}x{} but its mask is {}x{}",
                    mr_path.display(),
                    image.height,
                    image.width,
                    mask.height,
                    mask.width
                )));
            }
            Ok(Sample { image, mask })
        })
        .collect()
}

/// Loads the raw (un-remapped) masks of a manifest.
pub fn load_masks(manifest: &Manifest) -> Result<Vec<LabelMask>> {
    manifest.entries.iter().map(|e| read_mask(&e.mask)).collect()
}

fn read_mask(path: &std::path::Path) -> Result<LabelMask> {
    let s = read_png(path)?;
    if s.kind != SliceKind::Mask8 {
        return Err(VolioError::Unsupported(format!("{} is not an 8-bit mask", path.display())).into());
    }
    LabelMask::from_slice(&s)
}
