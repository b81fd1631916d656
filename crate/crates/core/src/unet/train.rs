use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{weighted_dice_loss, DiceSums};
use super::{adam_step, AdamState, Checkpoint, Mode, Result, Tensor4, UNet, UNetConfig, UnetError};
use crate::dataset::{argmax_decode, normalize, ClassWeights, LabelMask, NormStats, Sample};
use crate::seed;
use crate::volio::Slice2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub class_weights: ClassWeights,
    pub seed: u64,
}

impl TrainConfig {
    /// Adam at 1e-4, batches of 8, 150 epochs.
    pub fn full_size(class_weights: ClassWeights, seed: u64) -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            epochs: 150,
            class_weights,
            seed,
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".into());
        }
        if self.class_weights.len() != n_classes {
            problems.push(format!(
                "{} class weights for {n_classes} classes",
                self.class_weights.len()
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(UnetError::Config(problems.join("; ")))
        }
    }
}

/// A normalized network input with its (already remapped) target.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub input: Vec<f64>,
    pub target: LabelMask,
}

pub fn prepare(samples: &[Sample], stats: &NormStats) -> Vec<Prepared> {
    samples
        .iter()
        .map(|s| Prepared {
            input: normalize(&s.image.pixels, stats),
            target: s.mask.clone(),
        })
        .collect()
}

fn make_batch(data: &[Prepared], idx: &[usize], n_classes: usize) -> Result<(Tensor4, Tensor4)> {
    let first = &data[idx[0]].target;
    let (h, w) = (first.height, first.width);
    let hw = h * w;
    let mut x = Tensor4::zeros(idx.len(), 1, h, w);
    let mut g = Tensor4::zeros(idx.len(), n_classes, h, w);
    for (b, &i) in idx.iter().enumerate() {
        let s = &data[i];
        if s.input.len() != hw || (s.target.height, s.target.width) != (h, w) {
            return Err(UnetError::Shape("samples in a batch differ in size".into()));
        }
        x.sample_mut(b).copy_from_slice(&s.input);
        let gs = g.sample_mut(b);
        for (p, &c) in s.target.labels.iter().enumerate() {
            let c = c as usize;
            if c >= n_classes {
                return Err(UnetError::Shape(format!("label {c} >= {n_classes} classes")));
            }
            gs[c * hw + p] = 1.0;
        }
    }
    Ok((x, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_error: f64,
    pub saved: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Every saved checkpoint, in order; validation errors strictly
    /// decrease along it.
    pub history: Vec<Checkpoint>,
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Trains a fresh network. See [`train_with`].
pub fn train(
    unet: UNetConfig,
    cfg: &TrainConfig,
    norm_stats: NormStats,
    train_set: &[Prepared],
    val_set: &[Prepared],
) -> Result<TrainOutcome> {
    train_with(unet, cfg, norm_stats, train_set, val_set, |_, _| Ok(()))
}

/// Trains for `cfg.epochs` epochs. Each epoch shuffles the training set
/// with a seed derived from `(cfg.seed, epoch)`, runs sequential batches
/// with Adam updates, then scores the validation set in eval mode. A
/// checkpoint is taken whenever the validation error strictly improves.
///
/// `observer` sees every epoch log and, on improvement, the new checkpoint.
pub fn train_with(
    unet: UNetConfig,
    cfg: &TrainConfig,
    norm_stats: NormStats,
    train_set: &[Prepared],
    val_set: &[Prepared],
    mut observer: impl FnMut(&EpochLog, Option<&Checkpoint>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate(unet.n_classes)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(UnetError::Empty("training and validation sets must be non-empty".into()));
    }
    let start = Instant::now();
    let mut net = UNet::new(unet)?;
    let mut adam = AdamState::new(&net.params);
    let weights = &cfg.class_weights.w;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history: Vec<Checkpoint> = Vec::new();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(cfg.seed, "epoch-shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, g) = make_batch(train_set, chunk, unet.n_classes)?;
            let probs = net.forward(&x, Mode::Train)?;
            let (loss, dprobs) = weighted_dice_loss(&probs, &g, weights)?;
            if !loss.is_finite() {
                return Err(UnetError::Diverged { epoch, batch: bi, loss });
            }
            let grads = net.backward(&dprobs)?;
            adam_step(&mut net.params, &grads, &mut adam, cfg.lr)?;
            loss_sum += loss;
            n_batches += 1;
        }
        if net.params.iter_values().any(|v| !v.is_finite()) {
            return Err(UnetError::Diverged {
                epoch,
                batch: n_batches,
                loss: f64::NAN,
            });
        }

        let val_error = dice_sums(&mut net, val_set, cfg.batch_size)?.weighted_loss(weights);
        let improved = history.last().is_none_or(|b| val_error < b.val_error);
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_error,
            saved: improved,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if improved {
            history.push(Checkpoint {
                config: unet,
                params: net.params.clone(),
                buffers: net.buffers.clone(),
                adam: adam.clone(),
                epoch,
                val_error,
                norm_stats,
                class_weights: cfg.class_weights.clone(),
            });
        }
        observer(&entry, if improved { history.last() } else { None })?;
        log.push(entry);
    }
    let best = history
        .last()
        .cloned()
        .ok_or_else(|| UnetError::Empty("no epochs were run".into()))?;
    Ok(TrainOutcome { history, best, log })
}

/// Dice sums over a whole dataset in eval mode.
pub fn dice_sums(net: &mut UNet, data: &[Prepared], batch_size: usize) -> Result<DiceSums> {
    let mut sums = DiceSums::new(net.config.n_classes);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, g) = make_batch(data, chunk, net.config.n_classes)?;
        let p = net.forward(&x, Mode::Eval)?;
        sums.accumulate(&p, &g)?;
    }
    Ok(sums)
}

/// Dice error in percent over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// 100 x weighted Dice loss over the whole set.
    pub dice_error_percent: f64,
    /// 100 x unweighted Dice loss of each class.
    pub per_class_percent: Vec<f64>,
}

const EVAL_BATCH: usize = 8;

pub fn evaluate(checkpoint: &Checkpoint, test_set: &[Prepared], class_weights: &ClassWeights) -> Result<EvalResult> {
    if test_set.is_empty() {
        return Err(UnetError::Empty("test set is empty".into()));
    }
    if class_weights.len() != checkpoint.config.n_classes {
        return Err(UnetError::Config(format!(
            "{} class weights for {} classes",
            class_weights.len(),
            checkpoint.config.n_classes
        )));
    }
    let mut net = checkpoint.network()?;
    let sums = dice_sums(&mut net, test_set, EVAL_BATCH)?;
    Ok(EvalResult {
        dice_error_percent: 100.0 * sums.weighted_loss(&class_weights.w),
        per_class_percent: sums.per_class_loss().into_iter().map(|e| 100.0 * e).collect(),
    })
}

/// Argmax segmentation of one already-normalized image.
pub fn predict(net: &mut UNet, input: &[f64]) -> Result<LabelMask> {
    let (h, w) = net.config.input_size;
    let x = Tensor4::from_vec(1, 1, h, w, input.to_vec())?;
    let p = net.forward(&x, Mode::Eval)?;
    Ok(argmax_decode(&p, 0))
}

/// Normalizes a raw MR slice with the checkpoint's statistics and segments
/// it.
pub fn predict_slice(checkpoint: &Checkpoint, image: &Slice2D) -> Result<LabelMask> {
    let mut net = checkpoint.network()?;
    predict(&mut net, &normalize(&image.pixels, &checkpoint.norm_stats))
}
