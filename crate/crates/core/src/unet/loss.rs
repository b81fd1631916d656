//! Weighted multi-class soft Dice loss.
//!
//! With per-class weights `w`, probabilities `p` and one-hot targets `g`,
//! summed jointly over batch and pixels:
//!
//! ```text
//! L = 1 - (2 Σ_c w_c Σ_i p_ci g_ci + ε) / (Σ_c w_c Σ_i (p_ci + g_ci) + ε)
//! ```

use super::{Result, Tensor4, UnetError};

/// Smoothing term in numerator and denominator.
pub const DICE_EPS: f64 = 1e-5;

/// Per-class sums `Σ p g` and `Σ (p + g)`, accumulated over any number of
/// batches so a whole dataset can be scored as one joint reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceSums {
    pub intersection: Vec<f64>,
    pub total: Vec<f64>,
}

impl DiceSums {
    pub fn new(n_classes: usize) -> Self {
        Self {
            intersection: vec![0.0; n_classes],
            total: vec![0.0; n_classes],
        }
    }

    pub fn accumulate(&mut self, probs: &Tensor4, target: &Tensor4) -> Result<()> {
        check_shapes(probs, target, self.intersection.len())?;
        let hw = probs.hw();
        for n in 0..probs.n {
            let (p, g) = (probs.sample(n), target.sample(n));
            for c in 0..probs.c {
                let range = c * hw..(c + 1) * hw;
                let (mut inter, mut tot) = (0.0, 0.0);
                for (pi, gi) in p[range.clone()].iter().zip(&g[range]) {
                    inter += pi * gi;
                    tot += pi + gi;
                }
                self.intersection[c] += inter;
                self.total[c] += tot;
            }
        }
        Ok(())
    }

    fn weighted(&self, weights: &[f64]) -> (f64, f64) {
        let num = 2.0 * dot(weights, &self.intersection) + DICE_EPS;
        let den = dot(weights, &self.total) + DICE_EPS;
        (num, den)
    }

    pub fn weighted_loss(&self, weights: &[f64]) -> f64 {
        let (num, den) = self.weighted(weights);
        1.0 - num / den
    }

    /// Unweighted Dice error of each class on its own.
    pub fn per_class_loss(&self) -> Vec<f64> {
        self.intersection
            .iter()
            .zip(&self.total)
            .map(|(i, t)| 1.0 - (2.0 * i + DICE_EPS) / (t + DICE_EPS))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_shapes(probs: &Tensor4, target: &Tensor4, n_classes: usize) -> Result<()> {
    if !probs.same_shape(target) {
        return Err(UnetError::Shape(format!(
            "probabilities {:?} vs target {:?}",
            probs.shape(),
            target.shape()
        )));
    }
    if probs.c != n_classes {
        return Err(UnetError::Shape(format!(
            "{} channels but {n_classes} class weights",
            probs.c
        )));
    }
    Ok(())
}

/// Loss value and its analytic gradient with respect to `probs`.
pub fn weighted_dice_loss(probs: &Tensor4, target: &Tensor4, weights: &[f64]) -> Result<(f64, Tensor4)> {
    let mut sums = DiceSums::new(weights.len());
    sums.accumulate(probs, target)?;
    let (num, den) = sums.weighted(weights);
    let loss = 1.0 - num / den;

    // dL/dp_ci = -w_c (2 g_ci den - num) / den^2
    let hw = probs.hw();
    let mut grad = probs.zeros_like();
    let inv_den2 = 1.0 / (den * den);
    for n in 0..probs.n {
        let g = target.sample(n);
        let out = grad.sample_mut(n);
        for c in 0..probs.c {
            let wc = weights[c];
            for i in c * hw..(c + 1) * hw {
                out[i] = -wc * (2.0 * g[i] * den - num) * inv_den2;
            }
        }
    }
    Ok((loss, grad))
}
