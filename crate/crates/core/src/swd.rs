//! Sliced Wasserstein distance between image sets.
//!
//! Each image is decomposed into a Laplacian pyramid; random 7x7 patches of
//! every band form a descriptor set per level. Descriptor dimensions are
//! standardized, projected onto random unit directions and compared by
//! sorting. The average over levels ranks generator checkpoints.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::volio::Slice2D;

/// Floor on the per-dimension standard deviation during descriptor
/// normalization.
pub const DESCRIPTOR_STD_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SwdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SwdError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SWDConfig {
    pub n_levels: usize,
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub n_projections: usize,
    pub seed: u64,
}

impl Default for SWDConfig {
    fn default() -> Self {
        Self {
            n_levels: 3,
            patch_size: 7,
            patches_per_image: 128,
            n_projections: 512,
            seed: 0,
        }
    }
}

impl SWDConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_levels == 0 {
            problems.push("n_levels must be at least 1".to_string());
        }
        if self.patch_size.is_multiple_of(2) {
            problems.push(format!("patch_size {} must be odd", self.patch_size));
        }
        if self.patches_per_image == 0 {
            problems.push("patches_per_image must be at least 1".to_string());
        }
        if self.n_projections == 0 {
            problems.push("n_projections must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SwdError::Config(problems.join("; ")))
        }
    }
}

/// A single-channel real image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(SwdError::Shape(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_slice(slice: &Slice2D) -> Self {
        Self {
            width: slice.width,
            height: slice.height,
            data: slice.pixels.iter().map(|&v| v as f64).collect(),
        }
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

const TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Reflect-101 index: `-1 -> 1`, `n -> n - 2`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

fn blur(img: &Image) -> Image {
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = (0..5)
                .map(|k| TAPS[k] * img.at(r, reflect(c as isize + k as isize - 2, w)))
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (0..5)
                .map(|k| TAPS[k] * tmp[reflect(r as isize + k as isize - 2, h) * w + c])
                .sum();
        }
    }
    Image {
        width: w,
        height: h,
        data: out,
    }
}

fn downsample(img: &Image) -> Image {
    let b = blur(img);
    let (w, h) = (img.width / 2, img.height / 2);
    let mut data = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            data.push(b.at(2 * r, 2 * c));
        }
    }
    Image {
        width: w,
        height: h,
        data,
    }
}

fn upsample(img: &Image) -> Image {
    let (w, h) = (img.width * 2, img.height * 2);
    let mut z = vec![0.0; w * h];
    for r in 0..img.height {
        for c in 0..img.width {
            z[2 * r * w + 2 * c] = 4.0 * img.at(r, c);
        }
    }
    blur(&Image {
        width: w,
        height: h,
        data: z,
    })
}

/// Band-pass levels `image_i - up(down(image_i))` for `i < n_levels - 1`,
/// followed by the low-pass residual.
pub fn laplacian_pyramid(image: &Image, n_levels: usize) -> Result<Vec<Image>> {
    if n_levels == 0 {
        return Err(SwdError::Config("n_levels must be at least 1".into()));
    }
    let div = 1usize << (n_levels - 1);
    if image.width == 0 || image.height == 0 || !image.width.is_multiple_of(div) || !image.height.is_multiple_of(div) {
        return Err(SwdError::Shape(format!(
            "{}x{} image is not divisible by {div}",
            image.width, image.height
        )));
    }
    let mut levels = Vec::with_capacity(n_levels);
    let mut current = image.clone();
    for _ in 1..n_levels {
        let low = downsample(&current);
        let up = upsample(&low);
        let band = current.data.iter().zip(&up.data).map(|(a, b)| a - b).collect();
        levels.push(Image {
            width: current.width,
            height: current.height,
            data: band,
        });
        current = low;
    }
    levels.push(current);
    Ok(levels)
}

/// Inverse of [`laplacian_pyramid`].
pub fn reconstruct(pyramid: &[Image]) -> Result<Image> {
    let (last, bands) = pyramid
        .split_last()
        .ok_or_else(|| SwdError::Empty("pyramid has no levels".into()))?;
    let mut img = last.clone();
    for band in bands.iter().rev() {
        let up = upsample(&img);
        if (up.width, up.height) != (band.width, band.height) {
            return Err(SwdError::Shape("pyramid levels do not halve".into()));
        }
        img = Image {
            width: band.width,
            height: band.height,
            data: band.data.iter().zip(&up.data).map(|(a, b)| a + b).collect(),
        };
    }
    Ok(img)
}

/// Descriptors of one pyramid level: `n` rows of `dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub level: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Flattened `patch_size` x `patch_size` neighborhoods at uniformly drawn
/// positions, `per_image` from each image in order.
pub fn sample_patches<R: Rng>(
    images: &[Image],
    patch_size: usize,
    per_image: usize,
    level: usize,
    rng: &mut R,
) -> Result<DescriptorSet> {
    if images.is_empty() {
        return Err(SwdError::Empty("no images".into()));
    }
    let dim = patch_size * patch_size;
    let mut data = Vec::with_capacity(images.len() * per_image * dim);
    for img in images {
        if img.width < patch_size || img.height < patch_size {
            return Err(SwdError::Shape(format!(
                "{}x{} band is smaller than a {patch_size}x{patch_size} patch",
                img.width, img.height
            )));
        }
        for _ in 0..per_image {
            let r0 = rng.random_range(0..=img.height - patch_size);
            let c0 = rng.random_range(0..=img.width - patch_size);
            for r in r0..r0 + patch_size {
                data.extend_from_slice(&img.data[r * img.width + c0..r * img.width + c0 + patch_size]);
            }
        }
    }
    Ok(DescriptorSet { level, dim, data })
}

/// Shifts and scales every descriptor dimension to zero mean and unit
/// population variance over the set.
pub fn normalize_descriptors(set: &mut DescriptorSet) {
    let n = set.len();
    if n == 0 {
        return;
    }
    for j in 0..set.dim {
        let mean = (0..n).map(|i| set.data[i * set.dim + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (set.data[i * set.dim + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / var.sqrt().max(DESCRIPTOR_STD_EPS);
        for i in 0..n {
            let v = &mut set.data[i * set.dim + j];
            *v = (*v - mean) * inv;
        }
    }
}

/// Samples and normalizes the descriptors of one pyramid level. Patch
/// positions come from the stream `(config.seed, level)`.
pub fn extract_descriptors(bands: &[Image], level: usize, config: &SWDConfig) -> Result<DescriptorSet> {
    config.validate()?;
    let mut rng = seed::rng(config.seed, "swd-patches", level as u64);
    let mut set = sample_patches(bands, config.patch_size, config.patches_per_image, level, &mut rng)?;
    normalize_descriptors(&mut set);
    Ok(set)
}

/// `n` unit vectors of dimension `dim` drawn from an isotropic Gaussian.
pub fn projection_directions(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed, "swd-projections", dim as u64);
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Mean over random directions of the 1D Wasserstein-1 distance between
/// the projected sets. The larger set is truncated to a prefix of the
/// smaller one's size.
pub fn sliced_wasserstein(a: &DescriptorSet, b: &DescriptorSet, n_projections: usize, seed: u64) -> Result<f64> {
    if a.dim != b.dim {
        return Err(SwdError::Shape(format!("descriptor dimensions {} vs {}", a.dim, b.dim)));
    }
    let n = a.len().min(b.len());
    if n == 0 || n_projections == 0 {
        return Err(SwdError::Empty("descriptor sets and projections must be non-empty".into()));
    }
    let dirs = projection_directions(a.dim, n_projections, seed);
    let project = |set: &DescriptorSet, d: &[f64]| -> Vec<f64> {
        let mut p: Vec<f64> = (0..n)
            .map(|i| set.row(i).iter().zip(d).map(|(x, y)| x * y).sum())
            .collect();
        p.sort_unstable_by(f64::total_cmp);
        p
    };
    let mut total = 0.0;
    for d in &dirs {
        let (pa, pb) = (project(a, d), project(b, d));
        total += pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    }
    Ok(total / n_projections as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwdScore {
    pub per_level: Vec<f64>,
    pub average: f64,
}

fn pyramids(set: &[Image], n_levels: usize) -> Result<Vec<Vec<Image>>> {
    set.iter().map(|img| laplacian_pyramid(img, n_levels)).collect()
}

fn level_bands(pyrs: &[Vec<Image>], level: usize) -> Vec<Image> {
    pyrs.iter().map(|p| p[level].clone()).collect()
}

/// Per-level sliced Wasserstein distances and their mean. Both sets use the
/// same patch and projection streams.
pub fn swd_score(set_a: &[Image], set_b: &[Image], config: &SWDConfig) -> Result<SwdScore> {
    config.validate()?;
    if set_a.is_empty() || set_b.is_empty() {
        return Err(SwdError::Empty("image sets must be non-empty".into()));
    }
    let dims = (set_a[0].width, set_a[0].height);
    if let Some(bad) = set_a.iter().chain(set_b).find(|i| (i.width, i.height) != dims) {
        return Err(SwdError::Shape(format!(
            "image {}x{} differs from {}x{}",
            bad.width, bad.height, dims.0, dims.1
        )));
    }
    let (pa, pb) = (pyramids(set_a, config.n_levels)?, pyramids(set_b, config.n_levels)?);
    let mut per_level = Vec::with_capacity(config.n_levels);
    for level in 0..config.n_levels {
        let da = extract_descriptors(&level_bands(&pa, level), level, config)?;
        let db = extract_descriptors(&level_bands(&pb, level), level, config)?;
        let proj_seed = seed::derive(config.seed, "swd-level", level as u64);
        per_level.push(sliced_wasserstein(&da, &db, config.n_projections, proj_seed)?);
    }
    let average = per_level.iter().sum::<f64>() / per_level.len() as f64;
    Ok(SwdScore { per_level, average })
}

/// Every candidate's score against the reference, best first. Equal
/// averages are ordered by id.
pub fn rank_checkpoints<I: Ord + Clone>(
    candidates: &[(I, Vec<Image>)],
    reference: &[Image],
    config: &SWDConfig,
) -> Result<Vec<(I, SwdScore)>> {
    let mut scored = candidates
        .iter()
        .map(|(id, set)| Ok((id.clone(), swd_score(set, reference, config)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.1.average.total_cmp(&b.1.average).then_with(|| a.0.cmp(&b.0)));
    Ok(scored)
}

/// The candidate with the lowest average SWD against `reference`; ties go
/// to the smallest id.
pub fn select_checkpoint<I: Ord + Clone>(
    candidates: &[(I, Vec<Image>)],
    reference: &[Image],
    config: &SWDConfig,
) -> Result<I> {
    if candidates.is_empty() {
        return Err(SwdError::Empty("no candidate checkpoints".into()));
    }
    Ok(rank_checkpoints(candidates, reference, config)?.swap_remove(0).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::new(w, h, (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small_config() -> SWDConfig {
        SWDConfig {
            n_levels: 3,
            patches_per_image: 16,
            n_projections: 32,
            ..SWDConfig::default()
        }
    }

    #[test]
    fn reflect_101() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn constant_image_has_zero_bands() {
        let img = Image::new(16, 16, vec![3.5; 256]).unwrap();
        let p = laplacian_pyramid(&img, 3).unwrap();
        assert_eq!(p.len(), 3);
        for band in &p[..2] {
            assert!(band.data.iter().all(|v| v.abs() < 1e-12));
        }
        assert_eq!((p[2].width, p[2].height), (4, 4));
        assert!(p[2].data.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn single_level_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = random_image(&mut rng, 5, 3);
        assert_eq!(laplacian_pyramid(&img, 1).unwrap(), vec![img]);
    }

    #[test]
    fn reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let img = random_image(&mut rng, 64, 64);
            let back = reconstruct(&laplacian_pyramid(&img, 4).unwrap()).unwrap();
            let err = img.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = img.data.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(err / scale < 1e-6);
        }
    }

    #[test]
    fn indivisible_dims() {
        let img = Image::new(12, 8, vec![0.0; 96]).unwrap();
        assert!(laplacian_pyramid(&img, 3).is_ok());
        assert!(laplacian_pyramid(&img, 4).is_err());
    }

    #[test]
    fn patch_covering_the_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 7, 7);
        let set = sample_patches(std::slice::from_ref(&img), 7, 1, 0, &mut rng).unwrap();
        assert_eq!(set.dim, 49);
        assert_eq!(set.data, img.data);
        let small = random_image(&mut rng, 6, 9);
        assert!(sample_patches(&[small], 7, 1, 0, &mut rng).is_err());
    }

    #[test]
    fn normalized_descriptors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imgs: Vec<_> = (0..4).map(|_| random_image(&mut rng, 16, 16)).collect();
        let cfg = small_config();
        let set = extract_descriptors(&imgs, 0, &cfg).unwrap();
        assert_eq!(set, extract_descriptors(&imgs, 0, &cfg).unwrap());
        let n = set.len() as f64;
        for j in 0..set.dim {
            let col: Vec<f64> = (0..set.len()).map(|i| set.row(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn one_dimensional_two_points() {
        let a = DescriptorSet {
            level: 0,
            dim: 1,
            data: vec![0.0],
        };
        let b = DescriptorSet {
            level: 0,
            dim: 1,
            data: vec![1.0],
        };
        // The only unit directions in 1D are +1 and -1.
        assert_eq!(sliced_wasserstein(&a, &b, 16, 5).unwrap(), 1.0);
        let c = DescriptorSet {
            level: 0,
            dim: 2,
            data: vec![0.0, 0.0],
        };
        assert!(sliced_wasserstein(&a, &c, 4, 0).is_err());
    }

    #[test]
    fn unequal_sets_use_a_prefix() {
        let a = DescriptorSet {
            level: 0,
            dim: 1,
            data: vec![0.0, 5.0],
        };
        let b = DescriptorSet {
            level: 0,
            dim: 1,
            data: vec![2.0, 7.0, 100.0],
        };
        assert_eq!(sliced_wasserstein(&a, &b, 3, 1).unwrap(), 2.0);
    }

    #[test]
    fn identical_sets_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let imgs: Vec<_> = (0..3).map(|_| random_image(&mut rng, 32, 32)).collect();
        let s = swd_score(&imgs, &imgs, &small_config()).unwrap();
        assert_eq!(s.per_level.len(), 3);
        assert!(s.average < 1e-9);
    }

    #[test]
    fn more_patches_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let imgs: Vec<_> = (0..8).map(|_| random_image(&mut rng, 32, 32)).collect();
        let score = |patches: usize| {
            let base = SWDConfig {
                patches_per_image: patches,
                n_projections: 64,
                ..small_config()
            };
            let a = extract_descriptors(&imgs, 0, &SWDConfig { seed: 1, ..base }).unwrap();
            let b = extract_descriptors(&imgs, 0, &SWDConfig { seed: 2, ..base }).unwrap();
            sliced_wasserstein(&a, &b, 64, 9).unwrap()
        };
        let (few, many) = (score(8), score(256));
        assert!(few > 0.0 && many > 0.0);
        assert!(many < few, "{many} !< {few}");
    }

    #[test]
    fn selection_prefers_the_reference_and_breaks_ties_by_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let reference: Vec<_> = (0..3).map(|_| random_image(&mut rng, 16, 16)).collect();
        let noisy: Vec<_> = reference
            .iter()
            .map(|i| Image::new(16, 16, i.data.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let cfg = SWDConfig {
            n_levels: 2,
            ..small_config()
        };
        let cands = vec![(2, noisy.clone()), (7, reference.clone()), (3, reference.clone())];
        assert_eq!(select_checkpoint(&cands, &reference, &cfg).unwrap(), 3);
        assert_eq!(select_checkpoint(&[(9, noisy)], &reference, &cfg).unwrap(), 9);
        assert!(select_checkpoint::<u8>(&[], &reference, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SWDConfig::default().validate().is_ok());
        let bad = SWDConfig {
            patch_size: 6,
            n_projections: 0,
            ..SWDConfig::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("odd") && msg.contains("n_projections"));
    }

    fn sets() -> impl Strategy<Value = (DescriptorSet, DescriptorSet)> {
        (1usize..5, 1usize..12).prop_flat_map(|(dim, n)| {
            let v = prop::collection::vec(-10.0f64..10.0, dim * n);
            (v.clone(), v).prop_map(move |(a, b)| {
                (
                    DescriptorSet { level: 0, dim, data: a },
                    DescriptorSet { level: 0, dim, data: b },
                )
            })
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_non_negative((a, b) in sets(), seed in any::<u64>()) {
            let ab = sliced_wasserstein(&a, &b, 8, seed).unwrap();
            let ba = sliced_wasserstein(&b, &a, 8, seed).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert_eq!(sliced_wasserstein(&a, &a, 8, seed).unwrap(), 0.0);
        }
    }
}
