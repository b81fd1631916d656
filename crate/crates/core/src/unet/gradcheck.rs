//! Central finite-difference oracle for checking analytic gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use super::Tensor4;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn rand_tensor<R: Rng>(rng: &mut R, shape: [usize; 4]) -> Tensor4 {
    let [n, c, h, w] = shape;
    let data = (0..n * c * h * w).map(|_| rng.sample(StandardNormal)).collect();
    Tensor4 { n, c, h, w, data }
}

/// Central difference of `f` with respect to each coordinate of `x`,
/// restoring `x` afterwards.
pub fn numeric_gradient(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(x);
            x[i] = orig - FD_STEP;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Checks a layer against finite differences of the scalar
/// `L = sum(r * forward(x, params))` for a random probe `r`. Returns the
/// maximum relative error over the input and every parameter.
pub fn check_layer<R: Rng>(
    rng: &mut R,
    x: &Tensor4,
    params: &[Vec<f64>],
    forward: impl Fn(&Tensor4, &[Vec<f64>]) -> Tensor4,
    backward: impl Fn(&Tensor4, &[Vec<f64>], &Tensor4) -> (Tensor4, Vec<Vec<f64>>),
) -> f64 {
    let y = forward(x, params);
    let probe = rand_tensor(rng, y.shape());
    let loss = |x: &Tensor4, p: &[Vec<f64>]| -> f64 {
        forward(x, p).data.iter().zip(&probe.data).map(|(a, b)| a * b).sum()
    };
    let (dx, dparams) = backward(x, params, &probe);

    let mut worst = 0.0f64;
    let mut xv = x.clone();
    let num_dx = numeric_gradient(&mut xv.data.clone(), |d| {
        xv.data.copy_from_slice(d);
        loss(&xv, params)
    });
    for (a, n) in dx.data.iter().zip(&num_dx) {
        worst = worst.max(rel_err(*a, *n));
    }
    let mut p = params.to_vec();
    for k in 0..params.len() {
        let mut buf = p[k].clone();
        let num = numeric_gradient(&mut buf, |d| {
            p[k].copy_from_slice(d);
            loss(x, &p)
        });
        p[k].copy_from_slice(&params[k]);
        for (a, n) in dparams[k].iter().zip(&num) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    worst
}
