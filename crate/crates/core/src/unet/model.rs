use serde::{Deserialize, Serialize};

use super::init::he_normal_init;
use super::layers::{self, BnCache};
use super::{ParamSet, Result, Tensor4, UnetError};
use crate::seed;

/// Network topology. Encoder level `l` has `base_filters * 2^l` filters and
/// the bridge `base_filters * 2^n_levels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub n_levels: usize,
    pub base_filters: usize,
    pub n_classes: usize,
    pub input_size: (usize, usize),
    pub seed: u64,
}

impl UNetConfig {
    /// Four levels of 64..512 filters with a 1024-filter bridge on 256x256
    /// slices.
    pub fn full_size(n_classes: usize, seed: u64) -> Self {
        Self {
            n_levels: 4,
            base_filters: 64,
            n_classes,
            input_size: (256, 256),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1usize << self.n_levels;
        let (h, w) = self.input_size;
        let mut problems = Vec::new();
        if self.n_levels == 0 {
            problems.push("n_levels must be at least 1".to_string());
        }
        if self.base_filters == 0 {
            problems.push("base_filters must be at least 1".to_string());
        }
        if self.n_classes < 2 {
            problems.push(format!("n_classes {} < 2", self.n_classes));
        }
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            problems.push(format!("input {h}x{w} not divisible by 2^{}", self.n_levels));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(UnetError::Config(problems.join("; ")))
        }
    }

    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated and activations
    /// are cached for [`UNet::backward`].
    Train,
    /// Running statistics, no cache.
    Eval,
}

/// Convolution (no bias) + batch norm + ReLU. `transposed` selects a
/// stride-2 3x3 transposed convolution that doubles the resolution.
#[derive(Debug, Clone, Copy)]
struct Block {
    weight: usize,
    gamma: usize,
    beta: usize,
    running: usize,
    cout: usize,
    k: usize,
    transposed: bool,
}

struct BlockCache {
    input: Tensor4,
    bn: BnCache,
    output: Tensor4,
}

struct Cache {
    input_shape: [usize; 4],
    blocks: Vec<BlockCache>,
    pools: Vec<([usize; 4], Vec<usize>)>,
    up_channels: Vec<usize>,
    final_input: Tensor4,
    probs: Tensor4,
}

/// A U-Net: weights, batch-norm running statistics and the activation
/// cache of the last training-mode forward pass.
pub struct UNet {
    pub config: UNetConfig,
    pub params: ParamSet,
    /// Per batch-norm layer: running mean and running variance arrays.
    pub buffers: ParamSet,
    blocks: Vec<Block>,
    final_w: usize,
    final_b: usize,
    cache: Option<Cache>,
}

impl std::fmt::Debug for UNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UNet")
            .field("config", &self.config)
            .field("n_params", &self.params.n_values())
            .finish()
    }
}

struct Builder {
    params: ParamSet,
    buffers: ParamSet,
    blocks: Vec<Block>,
    seed: u64,
}

impl Builder {
    fn block(&mut self, name: &str, cin: usize, cout: usize, k: usize, transposed: bool) {
        let n = cin * cout * k * k;
        let fan_in = cin * k * k;
        let idx = self.params.len() as u64;
        let w = he_normal_init(n, fan_in, seed::derive(self.seed, "unet-init", idx));
        let dims = if transposed {
            vec![cin, cout, k, k]
        } else {
            vec![cout, cin, k, k]
        };
        let weight = self.params.push(format!("{name}.weight"), dims, w);
        let gamma = self.params.push(format!("{name}.bn.gamma"), vec![cout], vec![1.0; cout]);
        let beta = self.params.push(format!("{name}.bn.beta"), vec![cout], vec![0.0; cout]);
        let running = self
            .buffers
            .push(format!("{name}.bn.running_mean"), vec![cout], vec![0.0; cout]);
        self.buffers
            .push(format!("{name}.bn.running_var"), vec![cout], vec![1.0; cout]);
        self.blocks.push(Block {
            weight,
            gamma,
            beta,
            running,
            cout,
            k,
            transposed,
        });
    }
}

impl UNet {
    /// Builds a network with He-normal kernels, unit batch-norm scale and
    /// zero shifts and biases.
    ///
    /// Block order: per encoder level two convolutions, then the bridge
    /// convolution and its up-sampling, then per decoder level (deepest
    /// first) two convolutions followed by an up-sampling except at level 0.
    pub fn new(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: ParamSet::default(),
            buffers: ParamSet::default(),
            blocks: Vec::new(),
            seed: config.seed,
        };
        let levels = config.n_levels;
        let mut cin = 1;
        for l in 0..levels {
            let f = config.filters(l);
            b.block(&format!("enc{l}.conv0"), cin, f, 3, false);
            b.block(&format!("enc{l}.conv1"), f, f, 3, false);
            cin = f;
        }
        let fb = config.filters(levels);
        b.block("bridge.conv", cin, fb, 3, false);
        b.block("bridge.up", fb, config.filters(levels - 1), 3, true);
        for l in (0..levels).rev() {
            let f = config.filters(l);
            b.block(&format!("dec{l}.conv0"), 2 * f, f, 3, false);
            b.block(&format!("dec{l}.conv1"), f, f, 3, false);
            if l > 0 {
                b.block(&format!("dec{l}.up"), f, config.filters(l - 1), 3, true);
            }
        }
        let f0 = config.filters(0);
        let c = config.n_classes;
        let fw = he_normal_init(c * f0, f0, seed::derive(config.seed, "unet-init", u64::MAX));
        let final_w = b.params.push("final.weight", vec![c, f0, 1, 1], fw);
        let final_b = b.params.push("final.bias", vec![c], vec![0.0; c]);
        Ok(Self {
            config,
            params: b.params,
            buffers: b.buffers,
            blocks: b.blocks,
            final_w,
            final_b,
            cache: None,
        })
    }

    /// Rebuilds the network topology around stored weights.
    pub fn from_parts(config: UNetConfig, params: ParamSet, buffers: ParamSet) -> Result<Self> {
        let mut net = Self::new(config)?;
        if !net.params.same_layout(&params) || !net.buffers.same_layout(&buffers) {
            return Err(UnetError::Shape("stored weights do not match the configuration".into()));
        }
        net.params = params;
        net.buffers = buffers;
        Ok(net)
    }

    fn run_block(&mut self, bi: usize, x: Tensor4, mode: Mode, caches: &mut Vec<BlockCache>) -> Tensor4 {
        let b = self.blocks[bi];
        let z = if b.transposed {
            layers::tconv_forward(&x, &self.params[b.weight], &[], b.cout)
        } else {
            layers::conv2d_forward(&x, &self.params[b.weight], &[], b.cout, b.k)
        };
        let (gamma, beta) = (&self.params[b.gamma], &self.params[b.beta]);
        match mode {
            Mode::Train => {
                let (mut y, bn, mean, var) = layers::batchnorm_forward_train(&z, gamma, beta);
                let count = z.n * z.hw();
                let (rm, rv) = two_mut(&mut self.buffers, b.running, b.running + 1);
                layers::update_running_stats(rm, rv, &mean, &var, count);
                layers::relu_forward(&mut y);
                caches.push(BlockCache {
                    input: x,
                    bn,
                    output: y.clone(),
                });
                y
            }
            Mode::Eval => {
                let mut y = layers::batchnorm_forward_eval(
                    &z,
                    gamma,
                    beta,
                    &self.buffers[b.running],
                    &self.buffers[b.running + 1],
                );
                layers::relu_forward(&mut y);
                y
            }
        }
    }

    /// Per-pixel class probabilities `(N, n_classes, H, W)` for an
    /// `(N, 1, H, W)` batch.
    pub fn forward(&mut self, batch: &Tensor4, mode: Mode) -> Result<Tensor4> {
        let (h, w) = self.config.input_size;
        if batch.c != 1 || (batch.h, batch.w) != (h, w) || batch.n == 0 {
            return Err(UnetError::Shape(format!(
                "input {:?} does not match (N, 1, {h}, {w})",
                batch.shape()
            )));
        }
        self.cache = None;
        let levels = self.config.n_levels;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut pools = Vec::with_capacity(levels);
        let mut skips = Vec::with_capacity(levels);
        let mut up_channels = Vec::with_capacity(levels);
        let mut bi = 0;
        let mut x = batch.clone();
        for _ in 0..levels {
            x = self.run_block(bi, x, mode, &mut caches);
            x = self.run_block(bi + 1, x, mode, &mut caches);
            bi += 2;
            let (pooled, arg) = layers::maxpool_forward(&x);
            pools.push((x.shape(), arg));
            skips.push(x);
            x = pooled;
        }
        x = self.run_block(bi, x, mode, &mut caches);
        let mut up = self.run_block(bi + 1, x, mode, &mut caches);
        bi += 2;
        let mut last = None;
        for l in (0..levels).rev() {
            up_channels.push(up.c);
            let cat = layers::concat_forward(&up, &skips[l]);
            let mut a = self.run_block(bi, cat, mode, &mut caches);
            a = self.run_block(bi + 1, a, mode, &mut caches);
            bi += 2;
            if l > 0 {
                up = self.run_block(bi, a, mode, &mut caches);
                bi += 1;
            } else {
                last = Some(a);
            }
        }
        let last = last.expect("at least one level");
        let logits = layers::conv2d_forward(
            &last,
            &self.params[self.final_w],
            &self.params[self.final_b],
            self.config.n_classes,
            1,
        );
        let probs = layers::softmax_forward(&logits);
        if mode == Mode::Train {
            self.cache = Some(Cache {
                input_shape: batch.shape(),
                blocks: caches,
                pools,
                up_channels,
                final_input: last,
                probs: probs.clone(),
            });
        }
        Ok(probs)
    }

    fn back_block(&self, bi: usize, c: &BlockCache, mut dy: Tensor4, grads: &mut ParamSet) -> Tensor4 {
        let b = self.blocks[bi];
        layers::relu_backward(&c.output, &mut dy);
        let (dgamma, dbeta) = two_mut(grads, b.gamma, b.beta);
        let dz = layers::batchnorm_backward_train(&dy, &c.bn, &self.params[b.gamma], dgamma, dbeta);
        if b.transposed {
            layers::tconv_backward(&c.input, &self.params[b.weight], &dz, &mut grads[b.weight], &mut [])
        } else {
            layers::conv2d_backward(&c.input, &self.params[b.weight], &dz, b.k, &mut grads[b.weight], &mut [])
        }
    }

    /// Gradients of every parameter given `d loss / d probabilities` for the
    /// batch of the last training-mode [`forward`](Self::forward). Consumes
    /// the activation cache.
    pub fn backward(&mut self, loss_grad: &Tensor4) -> Result<ParamSet> {
        let cache = self.cache.take().ok_or(UnetError::MissingCache)?;
        if !loss_grad.same_shape(&cache.probs) {
            return Err(UnetError::Shape(format!(
                "loss gradient {:?} vs output {:?}",
                loss_grad.shape(),
                cache.probs.shape()
            )));
        }
        let mut grads = self.params.zeros_like();
        let levels = self.config.n_levels;

        let dlogits = layers::softmax_backward(&cache.probs, loss_grad);
        let (fw, fb) = two_mut(&mut grads, self.final_w, self.final_b);
        let mut d = layers::conv2d_backward(&cache.final_input, &self.params[self.final_w], &dlogits, 1, fw, fb);

        let mut bi = self.blocks.len();
        let mut dskips: Vec<Option<Tensor4>> = vec![None; levels];
        for l in 0..levels {
            if l > 0 {
                bi -= 1;
                d = self.back_block(bi, &cache.blocks[bi], d, &mut grads);
            }
            bi -= 2;
            d = self.back_block(bi + 1, &cache.blocks[bi + 1], d, &mut grads);
            d = self.back_block(bi, &cache.blocks[bi], d, &mut grads);
            let up_c = cache.up_channels[levels - 1 - l];
            let (dup, dskip) = layers::concat_backward(&d, up_c);
            dskips[l] = Some(dskip);
            d = dup;
        }
        bi -= 2;
        d = self.back_block(bi + 1, &cache.blocks[bi + 1], d, &mut grads);
        d = self.back_block(bi, &cache.blocks[bi], d, &mut grads);
        for l in (0..levels).rev() {
            let (shape, arg) = &cache.pools[l];
            let mut dx = layers::maxpool_backward(*shape, arg, &d);
            let dskip = dskips[l].take().expect("skip gradient");
            dx.data.iter_mut().zip(&dskip.data).for_each(|(a, b)| *a += b);
            bi -= 2;
            dx = self.back_block(bi + 1, &cache.blocks[bi + 1], dx, &mut grads);
            d = self.back_block(bi, &cache.blocks[bi], dx, &mut grads);
        }
        debug_assert_eq!(bi, 0);
        debug_assert_eq!(d.shape(), cache.input_shape);
        Ok(grads)
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

fn two_mut(set: &mut ParamSet, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = set.arrays.split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}
