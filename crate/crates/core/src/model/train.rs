//! Mini-batch Adam training with early stopping.
//!
//! Batch gradients are computed over fixed sample chunks and combined in
//! chunk order, so results are bit-identical whether the chunks run on one
//! thread or many (and with the `parallel` feature on or off).

use super::{loss, sigmoid, IpaModel, ParamStore};
use crate::data::{Row, TabularDataset, Task};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm_slice, SeededRng};
use crate::metrics;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Adam optimizer state: first/second moment per parameter plus step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    /// First-moment accumulators, parameter-shaped.
    pub m: ParamStore,
    /// Second-moment accumulators, parameter-shaped.
    pub v: ParamStore,
    /// Completed steps.
    pub step: u64,
    /// Learning rate.
    pub lr: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Denominator floor.
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the standard defaults (beta 0.9/0.999, eps 1e-8).
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut IpaModel, grads: &ParamStore, state: &mut AdamState) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    let (lr, eps) = (state.lr, state.eps);

    let mut pblocks = model.params.blocks_mut();
    let gblocks = grads.blocks();
    let mut mblocks = state.m.blocks_mut();
    let mut vblocks = state.v.blocks_mut();
    for bi in 0..pblocks.len() {
        let p = &mut pblocks[bi];
        let g = gblocks[bi];
        let m = &mut mblocks[bi];
        let v = &mut vblocks[bi];
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Keys the per-sample dropout stream: (seed, epoch, sample position).
#[derive(Debug, Clone, Copy)]
pub struct DropoutKey {
    /// Training seed.
    pub seed: u64,
    /// Epoch number.
    pub epoch: u64,
}

const STREAM_DROPOUT: u64 = 0xD09;
const STREAM_SHUFFLE: u64 = 0x5BF;

fn dropout_rng(key: DropoutKey, position: usize) -> SeededRng {
    SeededRng::new(key.seed, STREAM_DROPOUT ^ (key.epoch << 33) ^ position as u64)
}

/// Fixed chunk fan-out per batch; the partition (and thus the floating-point
/// summation order) never depends on the thread count.
const CHUNKS_PER_BATCH: usize = 4;

fn chunk_gradient(
    model: &IpaModel,
    chunk: &[&Row],
    chunk_base: usize,
    inv_n: f64,
    dropout: Option<DropoutKey>,
) -> Result<(ParamStore, f64)> {
    let mut grads = model.params.zeros_like();
    let mut loss_sum = 0.0;
    for (i, row) in chunk.iter().enumerate() {
        let mut rng = dropout.map(|key| dropout_rng(key, chunk_base + i));
        loss_sum +=
            model.accumulate_gradient(&row.fields, row.label, &mut grads, inv_n, rng.as_mut())?;
    }
    Ok((grads, loss_sum))
}

fn combine_chunks(model: &IpaModel, parts: Vec<(ParamStore, f64)>, n: usize) -> (ParamStore, f64) {
    let mut total = model.params.zeros_like();
    let mut loss_sum = 0.0;
    for (g, l) in parts {
        total.add_assign(&g);
        loss_sum += l;
    }
    (total, loss_sum / n as f64)
}

fn chunk_bounds(n: usize) -> usize {
    n.div_ceil(CHUNKS_PER_BATCH).max(1)
}

/// Mean-loss gradient of a batch, single-threaded reference path.
pub fn batch_gradients_serial(
    model: &IpaModel,
    batch: &[&Row],
    batch_base: usize,
    dropout: Option<DropoutKey>,
) -> Result<(ParamStore, f64)> {
    if batch.is_empty() {
        return Err(Error::Data("empty gradient batch".into()));
    }
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let size = chunk_bounds(n);
    let parts = batch
        .chunks(size)
        .enumerate()
        .map(|(ci, chunk)| chunk_gradient(model, chunk, batch_base + ci * size, inv_n, dropout))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_chunks(model, parts, n))
}

/// Mean-loss gradient of a batch; chunks fan out across the thread pool and
/// combine in chunk order, bit-identical to the serial path.
#[cfg(feature = "parallel")]
pub fn batch_gradients(
    model: &IpaModel,
    batch: &[&Row],
    batch_base: usize,
    dropout: Option<DropoutKey>,
) -> Result<(ParamStore, f64)> {
    if batch.is_empty() {
        return Err(Error::Data("empty gradient batch".into()));
    }
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let size = chunk_bounds(n);
    let parts = batch
        .par_chunks(size)
        .enumerate()
        .map(|(ci, chunk)| chunk_gradient(model, chunk, batch_base + ci * size, inv_n, dropout))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_chunks(model, parts, n))
}

/// Sequential fallback when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn batch_gradients(
    model: &IpaModel,
    batch: &[&Row],
    batch_base: usize,
    dropout: Option<DropoutKey>,
) -> Result<(ParamStore, f64)> {
    batch_gradients_serial(model, batch, batch_base, dropout)
}

/// Raw scores for every row (no dropout), in dataset order.
pub fn predict_scores(model: &IpaModel, ds: &TabularDataset) -> Result<Vec<f64>> {
    #[cfg(feature = "parallel")]
    {
        ds.rows
            .par_iter()
            .map(|row| model.forward(&row.fields))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ds.rows.iter().map(|row| model.forward(&row.fields)).collect()
    }
}

/// Loss and metrics of a model on a dataset.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    /// Mean per-sample training-objective loss.
    pub mean_loss: f64,
    /// AUC (classification only; None when undefined).
    pub auc: Option<f64>,
    /// Logloss on sigmoid probabilities (classification only).
    pub logloss: Option<f64>,
    /// RMSE (regression only).
    pub rmse: Option<f64>,
}

/// Evaluates the model on a dataset.
pub fn evaluate(model: &IpaModel, ds: &TabularDataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let scores = predict_scores(model, ds)?;
    let labels: Vec<f64> = ds.rows.iter().map(|r| r.label).collect();
    let mut mean_loss = 0.0;
    for (&s, &y) in scores.iter().zip(&labels) {
        mean_loss += loss(s, y, model.config.task)?;
    }
    mean_loss /= scores.len() as f64;

    Ok(match model.config.task {
        Task::Classification => {
            let probs: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
            EvalReport {
                mean_loss,
                auc: metrics::auc(&probs, &labels).ok(),
                logloss: Some(metrics::logloss(&probs, &labels)?),
                rmse: None,
            }
        }
        Task::Regression => EvalReport {
            mean_loss,
            auc: None,
            logloss: None,
            rmse: Some(metrics::rmse(&scores, &labels)?),
        },
    })
}

/// One epoch's record in the training history.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    /// Epoch number, starting at 0.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean validation loss.
    pub val_loss: f64,
    /// Validation AUC (classification; null when undefined).
    pub val_auc: Option<f64>,
    /// Validation RMSE (regression).
    pub val_rmse: Option<f64>,
    /// Layer-aggregator weights alpha_l (empty for other aggregators).
    pub alpha: Vec<f64>,
    /// Frobenius norm of each interaction weight block, layers 2..=L.
    pub w_frob: Vec<f64>,
    /// |alpha_l| * ||W block of layer l||_F for layers 2..=L (empty unless
    /// the Layer aggregator is active).
    pub alpha_w: Vec<f64>,
}

/// Full training history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// One record per completed epoch.
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored (best validation metric).
    pub best_epoch: usize,
}

impl TrainHistory {
    /// JSON Lines export: one epoch per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }

    /// Record of the best epoch.
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Maximum epochs.
    pub epochs: usize,
    /// Mini-batch size.
    pub batch_size: usize,
    /// Early stopping patience: stop after this many consecutive epochs
    /// without validation improvement.
    pub patience: usize,
    /// Seed for shuffling and dropout.
    pub seed: u64,
    /// Adam learning rate.
    pub lr: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 100, batch_size: 2048, patience: 3, seed: 42, lr: 1e-3 }
    }
}

/// Mini-batch Adam with seeded epoch shuffling and early stopping on the
/// validation loss metric (logloss for classification, RMSE for
/// regression). Restores the best epoch's parameters before returning.
pub fn train(
    model: &mut IpaModel,
    train_ds: &TabularDataset,
    val_ds: &TabularDataset,
    opts: &TrainOptions,
) -> Result<TrainHistory> {
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::Data("training and validation sets must be nonempty".into()));
    }
    if train_ds.task != model.config.task {
        return Err(Error::Config("dataset task does not match model task".into()));
    }
    if opts.batch_size == 0 || opts.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be >= 1".into()));
    }

    // A fresh classification bias starts at the log-odds of the train
    // positive rate (only when still at its zero init).
    if model.config.task == Task::Classification
        && model.config.first_order
        && model.params.bias.first() == Some(&0.0)
    {
        let pos = train_ds.rows.iter().filter(|r| r.label == 1.0).count();
        let rate = (pos as f64 / train_ds.len() as f64).clamp(1e-6, 1.0 - 1e-6);
        model.params.bias[0] = (rate / (1.0 - rate)).ln();
    }

    let mut adam = AdamState::new(&model.params, opts.lr);
    let n = train_ds.len();
    let mut history = TrainHistory { epochs: Vec::new(), best_epoch: 0 };
    let mut best_metric = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut bad_epochs = 0usize;
    let dropout_on = model.config.dropout_rate > 0.0;

    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::new(opts.seed, STREAM_SHUFFLE ^ (epoch as u64) << 1).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut base = 0usize;
        while base < n {
            let end = (base + opts.batch_size).min(n);
            let batch: Vec<&Row> = order[base..end].iter().map(|&i| &train_ds.rows[i]).collect();
            let key = dropout_on.then_some(DropoutKey { seed: opts.seed, epoch: epoch as u64 });
            let (grads, mean_loss) = batch_gradients(model, &batch, base, key)?;
            adam_step(model, &grads, &mut adam);
            loss_sum += mean_loss * batch.len() as f64;
            seen += batch.len();
            base = end;
        }
        let train_loss = loss_sum / seen as f64;

        let val = evaluate(model, val_ds)?;
        let record = epoch_record(model, epoch, train_loss, &val);
        let stop_metric = match model.config.task {
            Task::Classification => val.logloss.unwrap_or(val.mean_loss),
            Task::Regression => val.rmse.unwrap_or(val.mean_loss),
        };
        history.epochs.push(record);

        if stop_metric < best_metric {
            best_metric = stop_metric;
            best_params = model.params.clone();
            history.best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > opts.patience {
                break;
            }
        }
    }

    model.params = best_params;
    Ok(history)
}

fn epoch_record(model: &IpaModel, epoch: usize, train_loss: f64, val: &EvalReport) -> EpochRecord {
    use crate::aggregate::AggregatorKind;
    let cfg = &model.config;
    let w_frob: Vec<f64> = model
        .params
        .layer_blocks
        .iter()
        .map(|b| frobenius_norm_slice(b))
        .collect();
    let (alpha, alpha_w) = if cfg.code.aggregator == AggregatorKind::Layer {
        let alpha = model.params.agg_weights.clone();
        // alpha is indexed over participating layers; map layer l (2..=L)
        // to its alpha and pair it with that layer's weight-block norm.
        let offset = if cfg.agg_include_first { 1 } else { 0 };
        let alpha_w = (2..=cfg.l)
            .map(|l| {
                let ai = l - 2 + offset;
                alpha[ai].abs() * w_frob[l - 2]
            })
            .collect();
        (alpha, alpha_w)
    } else {
        (Vec::new(), Vec::new())
    };
    EpochRecord {
        epoch,
        train_loss,
        val_loss: val.mean_loss,
        val_auc: val.auc,
        val_rmse: val.rmse,
        alpha,
        w_frob,
        alpha_w,
    }
}
