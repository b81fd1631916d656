use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Result, SynthError};
use crate::dataset::{remap_classes, ClassScheme, LabelMask, N_SOURCE_CLASSES};
use crate::seed;
use crate::volio::{Slice2D, SliceKind};

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Geometry and rendering parameters of the procedural phantoms.
///
/// Lengths are fractions of `image_size`. The head is an ellipse whose
/// outer shell is CSF (6), then gray matter (5), with white matter (4)
/// inside. Tumors are elliptical blobs centred in the inner part of the
/// head, layered edema (2), enhancing ring (3) and core (1) from the
/// outside in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomParams {
    pub image_size: usize,
    /// Masks are generated with 7 labels and remapped to this scheme.
    pub class_count: usize,
    pub center_jitter: f64,
    pub head_axis_x: Range,
    pub head_axis_y: Range,
    pub head_rotation: Range,
    /// Shell thicknesses as fractions of the normalized head radius.
    pub csf_thickness: Range,
    pub gm_thickness: Range,
    pub tumor_count: (usize, usize),
    pub tumor_radius: Range,
    /// Minor/major axis ratio of a tumor.
    pub tumor_aspect: Range,
    /// Tumor centres lie within this normalized head radius.
    pub tumor_region: f64,
    /// Radii of the enhancing ring and the core relative to the edema.
    pub enhancing_frac: f64,
    pub core_frac: f64,
    /// Per-label intensity mean and standard deviation, indexed by the
    /// label value of the rendered mask.
    pub intensity_mean: Vec<f64>,
    pub intensity_std: Vec<f64>,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            image_size: 64,
            class_count: 7,
            center_jitter: 0.02,
            head_axis_x: Range::new(0.34, 0.40),
            head_axis_y: Range::new(0.40, 0.44),
            head_rotation: Range::new(-0.2, 0.2),
            csf_thickness: Range::new(0.08, 0.14),
            gm_thickness: Range::new(0.14, 0.22),
            tumor_count: (0, 3),
            tumor_radius: Range::new(0.05, 0.11),
            tumor_aspect: Range::new(0.6, 1.0),
            tumor_region: 0.55,
            enhancing_frac: 0.7,
            core_frac: 0.4,
            intensity_mean: vec![0.0, 900.0, 2200.0, 3000.0, 1600.0, 1150.0, 450.0],
            intensity_std: vec![15.0, 140.0, 140.0, 140.0, 120.0, 120.0, 120.0],
            seed: 0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.image_size < 8 {
            problems.push(format!("image_size {} < 8", self.image_size));
        }
        if ClassScheme::for_classes(self.class_count).is_err() {
            problems.push(format!("class_count {} is not 2, 4 or 7", self.class_count));
        }
        for (name, r) in [
            ("head_axis_x", self.head_axis_x),
            ("head_axis_y", self.head_axis_y),
            ("head_rotation", self.head_rotation),
            ("csf_thickness", self.csf_thickness),
            ("gm_thickness", self.gm_thickness),
            ("tumor_radius", self.tumor_radius),
            ("tumor_aspect", self.tumor_aspect),
        ] {
            if !r.valid() {
                problems.push(format!("{name} [{}, {}] is not a range", r.lo, r.hi));
            }
        }
        if !(self.head_axis_x.lo > 0.0 && self.head_axis_y.lo > 0.0) {
            problems.push("head axes must be positive".into());
        }
        if self.head_axis_x.hi.max(self.head_axis_y.hi) + self.center_jitter > 0.5 {
            problems.push("head does not fit in the image".into());
        }
        if !(self.center_jitter >= 0.0) {
            problems.push("center_jitter must be non-negative".into());
        }
        if self.csf_thickness.lo < 0.0 || self.gm_thickness.lo < 0.0 || self.csf_thickness.hi + self.gm_thickness.hi >= 1.0 {
            problems.push("tissue shells must be non-negative and leave white matter".into());
        }
        if self.tumor_count.0 > self.tumor_count.1 {
            problems.push(format!("tumor_count {:?} is not a range", self.tumor_count));
        }
        if self.tumor_radius.lo <= 0.0 || self.tumor_aspect.lo <= 0.0 || self.tumor_aspect.hi > 1.0 {
            problems.push("tumor radius must be positive and aspect in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.tumor_region) {
            problems.push(format!("tumor_region {} outside [0, 1]", self.tumor_region));
        }
        if !(0.0 < self.core_frac && self.core_frac < self.enhancing_frac && self.enhancing_frac < 1.0) {
            problems.push("need 0 < core_frac < enhancing_frac < 1".into());
        }
        let n = self.intensity_mean.len();
        if n < N_SOURCE_CLASSES || self.intensity_std.len() != n {
            problems.push(format!(
                "need {N_SOURCE_CLASSES} intensity means and as many standard deviations"
            ));
        }
        if self
            .intensity_mean
            .iter()
            .chain(&self.intensity_std)
            .any(|v| !v.is_finite())
            || self.intensity_std.iter().any(|&s| s < 0.0)
        {
            problems.push("intensities must be finite with non-negative spread".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SynthError::Params(problems.join("; ")))
        }
    }

    /// Bounds on the fraction of tumor pixels in one phantom.
    pub fn tumor_fraction_bounds(&self) -> (f64, f64) {
        let r = self.tumor_radius;
        let lo = if self.tumor_count.0 == 0 {
            0.0
        } else {
            // One blob of the smallest size, discretized pessimistically.
            let rad = (r.lo * self.tumor_aspect.lo * self.image_size as f64 - 1.0).max(0.0);
            PI * rad * rad / (self.image_size * self.image_size) as f64
        };
        let rad = r.hi * self.image_size as f64 + 1.0;
        let hi = self.tumor_count.1 as f64 * PI * rad * rad / (self.image_size * self.image_size) as f64;
        (lo, hi.min(1.0))
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Normalized radius: 1 on the boundary.
    fn rho(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.ax).powi(2) + (v / self.ay).powi(2)).sqrt()
    }

    /// The point at normalized polar coordinates `(s, phi)`.
    fn point(&self, s: f64, phi: f64) -> (f64, f64) {
        let (u, v) = (s * self.ax * phi.cos(), s * self.ay * phi.sin());
        (self.cx + u * self.cos - v * self.sin, self.cy + u * self.sin + v * self.cos)
    }
}

fn ellipse(cx: f64, cy: f64, ax: f64, ay: f64, angle: f64) -> Ellipse {
    Ellipse {
        cx,
        cy,
        ax,
        ay,
        cos: angle.cos(),
        sin: angle.sin(),
    }
}

/// A seeded phantom label mask, remapped to `params.class_count` classes.
pub fn gen_phantom_mask(params: &PhantomParams, seed_value: u64) -> Result<LabelMask> {
    params.validate()?;
    let mut rng = seed::rng(seed_value, "phantom-mask", 0);
    let n = params.image_size;
    let s = n as f64;
    let mid = (s - 1.0) / 2.0;
    let j = params.center_jitter * s;
    let jitter = Range::new(-j, j);
    let head = ellipse(
        mid + jitter.sample(&mut rng),
        mid + jitter.sample(&mut rng),
        params.head_axis_x.sample(&mut rng) * s,
        params.head_axis_y.sample(&mut rng) * s,
        params.head_rotation.sample(&mut rng),
    );
    let csf = params.csf_thickness.sample(&mut rng);
    let gm = params.gm_thickness.sample(&mut rng);

    let n_tumors = rng.random_range(params.tumor_count.0..=params.tumor_count.1);
    let tumors: Vec<Ellipse> = (0..n_tumors)
        .map(|_| {
            let (x, y) = head.point(
                params.tumor_region * rng.random::<f64>().sqrt(),
                rng.random_range(0.0..2.0 * PI),
            );
            let r = params.tumor_radius.sample(&mut rng) * s;
            let aspect = params.tumor_aspect.sample(&mut rng);
            ellipse(x, y, r, r * aspect, rng.random_range(0.0..PI))
        })
        .collect();

    let mut labels = vec![0u8; n * n];
    for row in 0..n {
        for col in 0..n {
            let (x, y) = (col as f64, row as f64);
            let rho = head.rho(x, y);
            if rho > 1.0 {
                continue;
            }
            // Deepest tumor layer over all blobs: 3 core, 2 enhancing, 1 edema.
            let depth = tumors
                .iter()
                .map(|t| {
                    let q = t.rho(x, y);
                    if q <= params.core_frac {
                        3
                    } else if q <= params.enhancing_frac {
                        2
                    } else if q <= 1.0 {
                        1
                    } else {
                        0
                    }
                })
                .max()
                .unwrap_or(0);
            labels[row * n + col] = match depth {
                3 => 1,
                2 => 3,
                1 => 2,
                _ if rho > 1.0 - csf => 6,
                _ if rho > 1.0 - csf - gm => 5,
                _ => 4,
            };
        }
    }
    let mask = LabelMask::new(n, n, labels)?;
    Ok(remap_classes(&mask, &ClassScheme::for_classes(params.class_count)?)?)
}

/// Draws every pixel from `Normal(mean[label], std[label])`, clamped to the
/// 16-bit range and rounded.
pub fn render_intensity(mask: &LabelMask, params: &PhantomParams, seed_value: u64) -> Result<Slice2D> {
    params.validate()?;
    let max = mask.max_label() as usize;
    if max >= params.class_count {
        return Err(SynthError::Params(format!(
            "mask label {max} outside {} classes",
            params.class_count
        )));
    }
    let dists = params
        .intensity_mean
        .iter()
        .zip(&params.intensity_std)
        .map(|(&m, &s)| Normal::new(m, s).map_err(|e| SynthError::Params(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seed::rng(seed_value, "phantom-render", 0);
    let pixels = mask
        .labels
        .iter()
        .map(|&l| dists[l as usize].sample(&mut rng).round().clamp(0.0, 65535.0) as u16)
        .collect();
    Ok(Slice2D::new(mask.width, mask.height, pixels, SliceKind::Mr16, None)?)
}
