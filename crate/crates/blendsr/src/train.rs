//! L2 loss, Adam optimizer, plateau learning-rate schedule and the
//! training loop.
//!
//! The loop is bit-deterministic given (seed, dataset order, config):
//! epoch shuffles come from a seeded ChaCha stream, partial trailing
//! batches are dropped so the loss normalizer stays constant, and any
//! non-finite loss or gradient aborts with a diagnostic instead of
//! silently continuing.

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::metrics::evaluate_psnr;
use crate::network::{ModelGrad, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::{concat_batch, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Epochs without validation-PSNR improvement before the rate halves.
    pub patience: usize,
    pub lr_factor: f64,
    pub lr_floor: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            patience: 10,
            lr_factor: 0.5,
            lr_floor: 1e-7,
            max_epochs: 100,
            seed: 0,
        }
    }
}

/// Mean squared error over every element, plus its gradient with respect
/// to the reconstruction.
pub fn l2_loss<S: Scalar>(sr: &Tensor<S>, hr: &Tensor<S>) -> Result<(S, Tensor<S>)> {
    if sr.shape() != hr.shape() {
        return Err(Error::Shape(format!(
            "l2_loss shapes differ: {} vs {}",
            sr.shape(),
            hr.shape()
        )));
    }
    let count = S::from_f64(sr.len() as f64);
    let mut loss = S::zero();
    let mut grad = Tensor::zeros(sr.n(), sr.c(), sr.h(), sr.w());
    let two = S::from_f64(2.0);
    for (i, (&s, &h)) in sr.data().iter().zip(hr.data()).enumerate() {
        let d = h - s;
        loss += d * d;
        grad.data_mut()[i] = two * (s - h) / count;
    }
    Ok((loss / count, grad))
}

/// First/second moment accumulators, one pair per parameter tensor in
/// model visit order, plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S = f32> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn for_model(model: &ModelParams<S>) -> Self {
        let mut lens = Vec::new();
        model.visit(&mut |_, _, slice| lens.push(slice.len()));
        Self {
            m: lens.iter().map(|&l| vec![S::zero(); l]).collect(),
            v: lens.iter().map(|&l| vec![S::zero(); l]).collect(),
            t: 0,
        }
    }
}

/// One Adam update for a single parameter tensor. `t` is the (already
/// incremented) global step used for bias correction.
pub fn adam_step<S: Scalar>(
    param: &mut [S],
    grad: &[S],
    m: &mut [S],
    v: &mut [S],
    t: u64,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != m.len() || param.len() != v.len() {
        return Err(Error::Shape(format!(
            "adam_step length mismatch: param {}, grad {}, m {}, v {}",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Train("non-finite gradient; step aborted".into()));
    }
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let eps = S::from_f64(cfg.eps);
    let lr = S::from_f64(lr);
    let bc1 = S::one() - S::from_f64(cfg.beta1.powi(t as i32));
    let bc2 = S::one() - S::from_f64(cfg.beta2.powi(t as i32));
    for i in 0..param.len() {
        m[i] = b1 * m[i] + (S::one() - b1) * grad[i];
        v[i] = b2 * v[i] + (S::one() - b2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Applies one optimizer step across the whole model.
pub fn adam_update<S: Scalar>(
    model: &mut ModelParams<S>,
    grads: &ModelGrad<S>,
    state: &mut AdamState<S>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut grad_slices: Vec<&[S]> = Vec::with_capacity(state.m.len());
    grads.visit(&mut |_, _, slice| grad_slices.push(slice));
    if grad_slices.len() != state.m.len() {
        return Err(Error::Train(format!(
            "optimizer state tracks {} tensors but the gradient has {}",
            state.m.len(),
            grad_slices.len()
        )));
    }
    state.t += 1;
    let t = state.t;
    let mut idx = 0;
    let mut failure: Option<Error> = None;
    let (ms, vs) = (&mut state.m, &mut state.v);
    model.visit_mut(&mut |name, _, param| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = adam_step(param, grad_slices[idx], &mut ms[idx], &mut vs[idx], t, lr, cfg) {
            failure = Some(Error::Train(format!("{e} (parameter {name})")));
        }
        idx += 1;
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Plateau rule: if the latest entry completes `patience` consecutive
/// epochs with no value strictly above the best seen before them, the
/// rate halves (clamped at `floor`). A halving resets the stagnation
/// window, which this replay reconstructs from the full history.
pub fn lr_schedule(val_history: &[f64], current_lr: f64, patience: usize, factor: f64, floor: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut stagnant = 0usize;
    let mut halve_now = false;
    for &v in val_history {
        if v > best {
            best = v;
            stagnant = 0;
            halve_now = false;
        } else {
            stagnant += 1;
            if stagnant >= patience {
                halve_now = true;
                stagnant = 0;
            } else {
                halve_now = false;
            }
        }
    }
    if halve_now {
        (current_lr * factor).max(floor)
    } else {
        current_lr
    }
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_psnr: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
}

impl EpochRecord {
    /// Plain-text log line; stable formatting keeps seeded runs
    /// byte-identical.
    pub fn log_line(&self) -> String {
        format!(
            "epoch {} train_loss {:.6e} val_psnr {:.4} lr {:e}",
            self.epoch, self.train_loss, self.val_psnr, self.lr
        )
    }
}

/// Final and best-so-far parameters with the epoch history.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ModelParams<f32>,
    pub state: AdamState<f32>,
    pub best_model: ModelParams<f32>,
    pub best_state: AdamState<f32>,
    /// Epoch the best validation PSNR was reached, 0 when never evaluated.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Mean Y-channel PSNR of clamped reconstructions over `samples`.
/// Infinite rows (exact reconstructions) are excluded from the mean.
pub fn validation_psnr(model: &ModelParams<f32>, samples: &[ImageSample]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for sample in samples {
        let sr = model.forward(&sample.lr)?.map(|v| v.clamp(0.0, 1.0));
        let p = evaluate_psnr(&sr, &sample.hr)?;
        if p.is_finite() {
            sum += p;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(sum / count as f64)
}

/// Runs seeded epochs of shuffled mini-batches (trailing partial batch
/// dropped), evaluates validation PSNR after each epoch, applies the
/// plateau schedule, and tracks the best-so-far parameters. When
/// `val_set` is empty the training set doubles as the validation set.
pub fn train(
    model: ModelParams<f32>,
    train_set: &[ImageSample],
    val_set: &[ImageSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelParams<f32>, &AdamState<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut model = model;
    let mut state = AdamState::for_model(&model);
    let mut best_model = model.clone();
    let mut best_state = state.clone();
    let mut best_epoch = 0usize;
    let mut best_psnr = f64::NEG_INFINITY;
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut psnr_history: Vec<f64> = Vec::new();
    let mut lr = cfg.lr0;

    if cfg.max_epochs == 0 {
        return Ok(TrainOutcome { model, state, best_model, best_state, best_epoch, history });
    }
    if train_set.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "training set has {} samples, smaller than one batch of {}",
            train_set.len(),
            cfg.batch_size
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        // Fisher-Yates from the seeded stream
        for i in (1..indices.len()).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in indices.chunks_exact(cfg.batch_size).enumerate() {
            let lr_refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &train_set[i].lr).collect();
            let hr_refs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &train_set[i].hr).collect();
            let lr_batch = concat_batch(&lr_refs)?;
            let hr_batch = concat_batch(&hr_refs)?;
            let sr = model.forward(&lr_batch)?;
            let (loss, grad_sr) = l2_loss(&sr, &hr_batch)?;
            if !loss.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {bi}"
                )));
            }
            let grads = model.backward(&lr_batch, &grad_sr)?;
            adam_update(&mut model, &grads, &mut state, lr, cfg)
                .map_err(|e| Error::Train(format!("{e} at epoch {epoch}, batch {bi}")))?;
            loss_sum += f64::from(loss);
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_psnr = if val_set.is_empty() {
            validation_psnr(&model, train_set)?
        } else {
            validation_psnr(&model, val_set)?
        };
        psnr_history.push(val_psnr);

        let record = EpochRecord { epoch, train_loss, val_psnr, lr };
        if val_psnr > best_psnr {
            best_psnr = val_psnr;
            best_model = model.clone();
            best_state = state.clone();
            best_epoch = epoch;
        }
        on_epoch(&record, &model, &state)?;
        history.push(record);
        lr = lr_schedule(&psnr_history, lr, cfg.patience, cfg.lr_factor, cfg.lr_floor);
    }

    Ok(TrainOutcome { model, state, best_model, best_state, best_epoch, history })
}
