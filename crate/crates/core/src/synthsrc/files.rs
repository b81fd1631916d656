use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::{gen_phantom_mask, render_intensity, PhantomParams, Result, SynthError};
use crate::dataset::{Entry, LabelMask, Manifest, Provenance, SplitTag, N_SOURCE_CLASSES};
use crate::seed;
use crate::volio::{read_png, slice_filename, write_png, Slice2D, SliceKind, SliceOrigin};

/// Source id of generated pairs; file names are `synth_slice<index>.png`.
pub const SYNTH_SOURCE: &str = "synth";

/// Pair `index` of the dataset seeded by `seed_value`. Each pair has its own
/// streams, so any subset can be regenerated independently.
pub fn gen_pair(params: &PhantomParams, seed_value: u64, index: usize) -> Result<(LabelMask, Slice2D)> {
    let mask = gen_phantom_mask(params, seed::derive(seed_value, "synth-mask", index as u64))?;
    let mut image = render_intensity(&mask, params, seed::derive(seed_value, "synth-image", index as u64))?;
    image.origin = Some(SliceOrigin {
        source_id: SYNTH_SOURCE.into(),
        axial_index: index,
    });
    Ok((mask, image))
}

/// Writes `n` pairs to `out_dir/images` and `out_dir/masks` and returns
/// them with a synthetic-provenance manifest (paths are absolute until the
/// manifest is saved).
pub fn gen_synth_dataset(
    n: usize,
    params: &PhantomParams,
    seed_value: u64,
    out_dir: &Path,
) -> Result<(Vec<(LabelMask, Slice2D)>, Manifest)> {
    if n == 0 {
        return Err(SynthError::Params("n must be at least 1".into()));
    }
    params.validate()?;
    let (img_dir, mask_dir) = (out_dir.join("images"), out_dir.join("masks"));
    fs::create_dir_all(&img_dir)?;
    fs::create_dir_all(&mask_dir)?;
    let mut pairs = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let (mask, image) = gen_pair(params, seed_value, i)?;
        let name = slice_filename(SYNTH_SOURCE, i);
        let (mr, mp) = (img_dir.join(&name), mask_dir.join(&name));
        write_png(&image, &mr)?;
        write_png(&mask.to_slice(), &mp)?;
        entries.push(Entry {
            mr: Some(mr),
            mask: mp,
            source: SYNTH_SOURCE.into(),
            index: i,
            provenance: Provenance::Synthetic,
        });
        pairs.push((mask, image));
    }
    Ok((pairs, Manifest::new(SplitTag::All, seed_value, entries)))
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for e in fs::read_dir(dir)? {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        if e.file_type()?.is_file() && name.to_ascii_lowercase().ends_with(".png") {
            names.insert(name);
        }
    }
    Ok(names)
}

fn check_mask(path: &Path) -> std::result::Result<Slice2D, String> {
    let s = read_png(path).map_err(|e| e.to_string())?;
    if s.kind != SliceKind::Mask8 {
        return Err(format!("{} image; masks must be 8-bit", s.kind));
    }
    if let Some(&v) = s.pixels.iter().find(|&&v| v as usize >= N_SOURCE_CLASSES) {
        return Err(format!("label {v} outside 0..{}", N_SOURCE_CLASSES - 1));
    }
    Ok(s)
}

fn check_image(path: &Path, mask: &Slice2D) -> std::result::Result<(), String> {
    let s = read_png(path).map_err(|e| e.to_string())?;
    if s.kind != SliceKind::Mr16 {
        return Err(format!("{} image; MR slices must be 16-bit", s.kind));
    }
    if s.dims() != mask.dims() {
        return Err(format!("image is {:?} but its mask is {:?}", s.dims(), mask.dims()));
    }
    Ok(())
}

/// Validates externally generated masks (and, when `image_dir` is given,
/// images with the same file names) and builds a synthetic manifest.
/// Every offending file is reported in one [`SynthError::Validation`].
pub fn ingest_external(mask_dir: &Path, image_dir: Option<&Path>) -> Result<Manifest> {
    let masks = png_names(mask_dir)?;
    let images = image_dir.map(png_names).transpose()?;
    let mut problems = Vec::new();
    let mut entries = Vec::with_capacity(masks.len());
    if masks.is_empty() {
        problems.push(format!("{}: no PNG masks", mask_dir.display()));
    }
    for (pos, name) in masks.iter().enumerate() {
        let mp = mask_dir.join(name);
        let mask = match check_mask(&mp) {
            Ok(m) => m,
            Err(e) => {
                problems.push(format!("{}: {e}", mp.display()));
                continue;
            }
        };
        let mr = match (image_dir, &images) {
            (Some(dir), Some(names)) => {
                let ip = dir.join(name);
                if !names.contains(name) {
                    problems.push(format!("{}: no matching image in {}", mp.display(), dir.display()));
                    continue;
                }
                if let Err(e) = check_image(&ip, &mask) {
                    problems.push(format!("{}: {e}", ip.display()));
                    continue;
                }
                Some(ip)
            }
            _ => None,
        };
        let (source, index) = match mask.origin {
            Some(o) => (o.source_id, o.axial_index),
            None => (name.trim_end_matches(".png").to_string(), pos),
        };
        entries.push(Entry {
            mr,
            mask: mp,
            source,
            index,
            provenance: Provenance::Synthetic,
        });
    }
    if let (Some(dir), Some(names)) = (image_dir, &images) {
        for name in names.difference(&masks) {
            problems.push(format!("{}: no matching mask", dir.join(name).display()));
        }
    }
    if !problems.is_empty() {
        return Err(SynthError::Validation(problems));
    }
    Ok(Manifest::new(SplitTag::All, 0, entries))
}
