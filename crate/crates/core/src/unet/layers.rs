//! Forward and backward kernels for every layer type in the network.
//!
//! Each backward function takes the upstream gradient `dy` and returns the
//! gradient with respect to the layer input, accumulating parameter
//! gradients into the provided buffers.

use super::gemm::{gemm, Mat};
use super::Tensor4;

// ---------------------------------------------------------------------------
// Convolution, stride 1, "same" padding, odd square kernel.
// Weights are laid out as [cout][cin][ky][kx].

fn im2col(x: &[f64], cin: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let hw = h * w;
    let r = (k / 2) as isize;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    let s0 = (x0 as isize + dx) as usize;
                    dst[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, k: usize, dx_out: &mut [f64]) {
    let hw = h * w;
    let r = (k / 2) as isize;
    for ci in 0..cin {
        let plane = &mut dx_out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..][..x1 - x0];
                    for (d, s) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `k x k` convolution with zero "same" padding. `bias` may be empty.
pub fn conv2d_forward(x: &Tensor4, weight: &[f64], bias: &[f64], cout: usize, k: usize) -> Tensor4 {
    let (cin, hw) = (x.c, x.hw());
    let kk = cin * k * k;
    assert_eq!(weight.len(), cout * kk, "conv weight shape");
    let mut y = Tensor4::zeros(x.n, cout, x.h, x.w);
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    for n in 0..x.n {
        let xs = x.sample(n);
        let src: &[f64] = if k == 1 {
            xs
        } else {
            im2col(xs, cin, x.h, x.w, k, &mut cols);
            &cols
        };
        let ys = y.sample_mut(n);
        gemm(
            1.0,
            Mat::row_major(weight, cout, kk),
            Mat::row_major(src, kk, hw),
            0.0,
            ys,
        );
        if !bias.is_empty() {
            for (co, plane) in ys.chunks_exact_mut(hw).enumerate() {
                plane.iter_mut().for_each(|v| *v += bias[co]);
            }
        }
    }
    y
}

pub fn conv2d_backward(
    x: &Tensor4,
    weight: &[f64],
    dy: &Tensor4,
    k: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Tensor4 {
    let (cin, cout, hw) = (x.c, dy.c, x.hw());
    let kk = cin * k * k;
    let mut dx = x.zeros_like();
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    let mut dcols = vec![0.0; kk * hw];
    for n in 0..x.n {
        let xs = x.sample(n);
        let dys = dy.sample(n);
        let src: &[f64] = if k == 1 {
            xs
        } else {
            im2col(xs, cin, x.h, x.w, k, &mut cols);
            &cols
        };
        gemm(
            1.0,
            Mat::row_major(dys, cout, hw),
            Mat::row_major(src, kk, hw).t(),
            1.0,
            dweight,
        );
        if !dbias.is_empty() {
            for (co, plane) in dys.chunks_exact(hw).enumerate() {
                dbias[co] += plane.iter().sum::<f64>();
            }
        }
        let target: &mut [f64] = if k == 1 { dx.sample_mut(n) } else { &mut dcols };
        gemm(
            1.0,
            Mat::row_major(weight, cout, kk).t(),
            Mat::row_major(dys, cout, hw),
            0.0,
            target,
        );
        if k != 1 {
            col2im(&dcols, cin, x.h, x.w, k, dx.sample_mut(n));
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Transposed convolution, 3x3 kernel, stride 2, "same" padding: output is
// twice the input size and input pixel (i, j) spreads to output rows
// 2i..2i+3 and columns 2j..2j+3, cropped at the bottom/right edge.
// Weights are laid out as [cin][cout][ky][kx].

pub const TCONV_K: usize = 3;

pub fn tconv_forward(x: &Tensor4, weight: &[f64], bias: &[f64], cout: usize) -> Tensor4 {
    let (cin, hin, win) = (x.c, x.h, x.w);
    let (hout, wout) = (2 * hin, 2 * win);
    let kk = cout * TCONV_K * TCONV_K;
    assert_eq!(weight.len(), cin * kk, "transposed conv weight shape");
    let mut y = Tensor4::zeros(x.n, cout, hout, wout);
    let mut cols = vec![0.0; kk * hin * win];
    for n in 0..x.n {
        gemm(
            1.0,
            Mat::row_major(weight, cin, kk).t(),
            Mat::row_major(x.sample(n), cin, hin * win),
            0.0,
            &mut cols,
        );
        let ys = y.sample_mut(n);
        for co in 0..cout {
            let plane = &mut ys[co * hout * wout..(co + 1) * hout * wout];
            for ky in 0..TCONV_K {
                for kx in 0..TCONV_K {
                    let row = &cols[((co * TCONV_K + ky) * TCONV_K + kx) * hin * win..][..hin * win];
                    for i in 0..hin {
                        let oy = 2 * i + ky;
                        if oy >= hout {
                            continue;
                        }
                        for j in 0..win {
                            let ox = 2 * j + kx;
                            if ox < wout {
                                plane[oy * wout + ox] += row[i * win + j];
                            }
                        }
                    }
                }
            }
            if !bias.is_empty() {
                plane.iter_mut().for_each(|v| *v += bias[co]);
            }
        }
    }
    y
}

pub fn tconv_backward(
    x: &Tensor4,
    weight: &[f64],
    dy: &Tensor4,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Tensor4 {
    let (cin, hin, win) = (x.c, x.h, x.w);
    let (cout, hout, wout) = (dy.c, dy.h, dy.w);
    let kk = cout * TCONV_K * TCONV_K;
    let mut dx = x.zeros_like();
    let mut dcols = vec![0.0; kk * hin * win];
    for n in 0..x.n {
        let dys = dy.sample(n);
        for co in 0..cout {
            let plane = &dys[co * hout * wout..(co + 1) * hout * wout];
            if !dbias.is_empty() {
                dbias[co] += plane.iter().sum::<f64>();
            }
            for ky in 0..TCONV_K {
                for kx in 0..TCONV_K {
                    let row = &mut dcols[((co * TCONV_K + ky) * TCONV_K + kx) * hin * win..][..hin * win];
                    for i in 0..hin {
                        let oy = 2 * i + ky;
                        for j in 0..win {
                            let ox = 2 * j + kx;
                            row[i * win + j] = if oy < hout && ox < wout {
                                plane[oy * wout + ox]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
        gemm(
            1.0,
            Mat::row_major(x.sample(n), cin, hin * win),
            Mat::row_major(&dcols, kk, hin * win).t(),
            1.0,
            dweight,
        );
        gemm(
            1.0,
            Mat::row_major(weight, cin, kk),
            Mat::row_major(&dcols, kk, hin * win),
            0.0,
            dx.sample_mut(n),
        );
    }
    dx
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, height, width) per channel.

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running estimate in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
}

/// Training-mode batch norm. Returns the output, the cache and the batch
/// mean and (biased) variance per channel.
pub fn batchnorm_forward_train(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
) -> (Tensor4, BnCache, Vec<f64>, Vec<f64>) {
    let (c, hw) = (x.c, x.hw());
    let m = (x.n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for n in 0..x.n {
        let s = x.sample(n);
        for ch in 0..c {
            mean[ch] += s[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for n in 0..x.n {
        let s = x.sample(n);
        for ch in 0..c {
            var[ch] += s[ch * hw..(ch + 1) * hw]
                .iter()
                .map(|v| (v - mean[ch]) * (v - mean[ch]))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = x.zeros_like();
    let mut y = x.zeros_like();
    for n in 0..x.n {
        let s = x.sample(n);
        let off = n * c * hw;
        for ch in 0..c {
            for i in ch * hw..(ch + 1) * hw {
                let xh = (s[i] - mean[ch]) * inv_std[ch];
                xhat.data[off + i] = xh;
                y.data[off + i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (y, BnCache { xhat, inv_std }, mean, var)
}

pub fn batchnorm_backward_train(
    dy: &Tensor4,
    cache: &BnCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor4 {
    let (c, hw) = (dy.c, dy.hw());
    let m = (dy.n * hw) as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for n in 0..dy.n {
        let d = dy.sample(n);
        let xh = cache.xhat.sample(n);
        for ch in 0..c {
            for i in ch * hw..(ch + 1) * hw {
                sum_dy[ch] += d[i];
                sum_dy_xhat[ch] += d[i] * xh[i];
            }
        }
    }
    for ch in 0..c {
        dgamma[ch] += sum_dy_xhat[ch];
        dbeta[ch] += sum_dy[ch];
    }
    let mut dx = dy.zeros_like();
    for n in 0..dy.n {
        let off = n * c * hw;
        for ch in 0..c {
            let scale = gamma[ch] * cache.inv_std[ch] / m;
            for i in off + ch * hw..off + (ch + 1) * hw {
                dx.data[i] = scale * (m * dy.data[i] - sum_dy[ch] - cache.xhat.data[i] * sum_dy_xhat[ch]);
            }
        }
    }
    dx
}

/// Inference-mode batch norm using running statistics.
pub fn batchnorm_forward_eval(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Tensor4 {
    let hw = x.hw();
    let mut y = x.clone();
    for n in 0..x.n {
        let s = y.sample_mut(n);
        for ch in 0..x.c {
            let inv = 1.0 / (running_var[ch] + BN_EPS).sqrt();
            for v in &mut s[ch * hw..(ch + 1) * hw] {
                *v = gamma[ch] * (*v - running_mean[ch]) * inv + beta[ch];
            }
        }
    }
    y
}

pub fn batchnorm_backward_eval(
    x: &Tensor4,
    dy: &Tensor4,
    gamma: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor4 {
    let hw = x.hw();
    let mut dx = dy.clone();
    for n in 0..x.n {
        let xs = x.sample(n);
        let ds = dx.sample_mut(n);
        for ch in 0..x.c {
            let inv = 1.0 / (running_var[ch] + BN_EPS).sqrt();
            for i in ch * hw..(ch + 1) * hw {
                dgamma[ch] += ds[i] * (xs[i] - running_mean[ch]) * inv;
                dbeta[ch] += ds[i];
                ds[i] *= gamma[ch] * inv;
            }
        }
    }
    dx
}

/// Exponential update of running statistics; the variance estimate is
/// Bessel-corrected.
pub fn update_running_stats(
    running_mean: &mut [f64],
    running_var: &mut [f64],
    batch_mean: &[f64],
    batch_var: &[f64],
    count: usize,
) {
    let bessel = if count > 1 {
        count as f64 / (count - 1) as f64
    } else {
        1.0
    };
    for ch in 0..running_mean.len() {
        running_mean[ch] = BN_MOMENTUM * running_mean[ch] + (1.0 - BN_MOMENTUM) * batch_mean[ch];
        running_var[ch] = BN_MOMENTUM * running_var[ch] + (1.0 - BN_MOMENTUM) * batch_var[ch] * bessel;
    }
}

// ---------------------------------------------------------------------------

pub fn relu_forward(x: &mut Tensor4) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// `y` is the ReLU output.
pub fn relu_backward(y: &Tensor4, dy: &mut Tensor4) {
    for (d, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
}

/// 2x2 max pooling, stride 2. Returns the output and, per output pixel, the
/// flat input index of the selected maximum (first in raster order on
/// ties).
pub fn maxpool_forward(x: &Tensor4) -> (Tensor4, Vec<usize>) {
    let (ho, wo) = (x.h / 2, x.w / 2);
    let mut y = Tensor4::zeros(x.n, x.c, ho, wo);
    let mut arg = vec![0usize; y.data.len()];
    let mut o = 0;
    for n in 0..x.n {
        for c in 0..x.c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = x.idx(n, c, 2 * i, 2 * j);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let k = x.idx(n, c, 2 * i + dy, 2 * j + dx);
                        if x.data[k] > x.data[best] {
                            best = k;
                        }
                    }
                    y.data[o] = x.data[best];
                    arg[o] = best;
                    o += 1;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward(input_shape: [usize; 4], arg: &[usize], dy: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor4::zeros(n, c, h, w);
    for (o, &k) in arg.iter().enumerate() {
        dx.data[k] += dy.data[o];
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat_forward(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shapes");
    let mut y = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
    for n in 0..a.n {
        let (la, lb) = (a.sample_len(), b.sample_len());
        let s = y.sample_mut(n);
        s[..la].copy_from_slice(a.sample(n));
        s[la..la + lb].copy_from_slice(b.sample(n));
    }
    y
}

pub fn concat_backward(dy: &Tensor4, ca: usize) -> (Tensor4, Tensor4) {
    let cb = dy.c - ca;
    let mut da = Tensor4::zeros(dy.n, ca, dy.h, dy.w);
    let mut db = Tensor4::zeros(dy.n, cb, dy.h, dy.w);
    for n in 0..dy.n {
        let s = dy.sample(n);
        let la = da.sample_len();
        da.sample_mut(n).copy_from_slice(&s[..la]);
        db.sample_mut(n).copy_from_slice(&s[la..]);
    }
    (da, db)
}

/// Softmax over the channel axis.
pub fn softmax_forward(logits: &Tensor4) -> Tensor4 {
    let hw = logits.hw();
    let mut p = logits.clone();
    for n in 0..logits.n {
        let s = p.sample_mut(n);
        for i in 0..hw {
            let mut mx = f64::NEG_INFINITY;
            for c in 0..logits.c {
                mx = mx.max(s[c * hw + i]);
            }
            let mut z = 0.0;
            for c in 0..logits.c {
                let e = (s[c * hw + i] - mx).exp();
                s[c * hw + i] = e;
                z += e;
            }
            for c in 0..logits.c {
                s[c * hw + i] /= z;
            }
        }
    }
    p
}

/// Gradient with respect to the logits given the softmax output `p`.
pub fn softmax_backward(p: &Tensor4, dp: &Tensor4) -> Tensor4 {
    let hw = p.hw();
    let mut dz = p.zeros_like();
    for n in 0..p.n {
        let ps = p.sample(n);
        let ds = dp.sample(n);
        let out = dz.sample_mut(n);
        for i in 0..hw {
            let dot: f64 = (0..p.c).map(|c| ps[c * hw + i] * ds[c * hw + i]).sum();
            for c in 0..p.c {
                out[c * hw + i] = ps[c * hw + i] * (ds[c * hw + i] - dot);
            }
        }
    }
    dz
}
