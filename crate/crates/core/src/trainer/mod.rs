//! Training loop, loss, optimizer and model files.

mod io;
mod optim;

use std::io::Write;

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::models::Model;
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub use io::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use optim::{adam_step, clip_grad_norm, global_grad_norm, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// `None` picks the per-kind default. Stateful kinds never shuffle.
    pub shuffle: Option<bool>,
    pub gradient_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            shuffle: None,
            gradient_clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn shuffles(&self, model: &Model) -> bool {
        !model.is_stateful() && self.shuffle.unwrap_or(true)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !positive(self.learning_rate) || !positive(self.adam_eps) {
            return Err(Error::Config("learning_rate and adam_eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.gradient_clip_norm.is_some_and(|c| !positive(c)) {
            return Err(Error::Config("gradient_clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn final_train_mse(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_mse)
    }

    /// `epoch,train_mse,val_mse`, one row per epoch, full precision.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,train_mse,val_mse")?;
        for (i, e) in self.epochs.iter().enumerate() {
            match e.val_mse {
                Some(v) => writeln!(w, "{},{},{}", i + 1, e.train_mse, v)?,
                None => writeln!(w, "{},{},", i + 1, e.train_mse)?,
            }
        }
        Ok(())
    }
}

/// Mean squared error and its gradient `2 (y_hat - y) / n`.
pub fn mse_loss(y_hat: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
    if y_hat.shape() != y.shape() {
        return Err(Error::Dimension(format!("mse of {:?} against {:?}", y_hat.shape(), y.shape())));
    }
    let n = y.len() as f64;
    let diff = y_hat.sub(y)?;
    let loss = diff.squared_norm() / n;
    Ok((loss, diff.map(|d| 2.0 * d / n)))
}

/// Consecutive chunks of `order`; the last may be short.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    order.chunks(batch_size.max(1)).collect()
}

fn check_layout(model: &Model, ds: &WindowedDataset) -> Result<()> {
    let spec = model.spec();
    if ds.channels != spec.input_channels || ds.window_len != spec.window_len {
        return Err(Error::Dimension(format!(
            "dataset has {} channels x {} quarters, model expects {} x {}",
            ds.channels, ds.window_len, spec.input_channels, spec.window_len
        )));
    }
    Ok(())
}

/// Drop carried state when the next batch has a different size.
fn align_state(model: &mut Model, batch: usize) {
    if model.state_batch().is_some_and(|b| b != batch) {
        model.reset_states();
    }
}

/// Stateful batch layout. Samples ordered by `(drug, target)` are cut into
/// `lanes` contiguous runs; batch `k` holds step `k` of every run, so row `j`
/// of consecutive batches walks forward along run `j`. The final batch is
/// short when the runs have unequal length.
pub fn lane_batches(ds: &WindowedDataset, lanes: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| (ds.samples[i].drug, ds.samples[i].target));
    let lanes = lanes.clamp(1, order.len().max(1));
    let (base, extra) = (order.len() / lanes, order.len() % lanes);
    let mut starts = Vec::with_capacity(lanes);
    let mut at = 0;
    for j in 0..lanes {
        starts.push(at);
        at += base + usize::from(j < extra);
    }
    let steps = base + usize::from(extra > 0);
    (0..steps)
        .map(|k| {
            (0..lanes)
                .filter(|&j| k < base || j < extra)
                .map(|j| order[starts[j] + k])
                .collect()
        })
        .collect()
}

/// Infer-mode predictions (normalized units) in dataset order. Stateful kinds
/// walk each drug's samples chronologically from zero state, one at a time.
pub fn predict_dataset(model: &mut Model, ds: &WindowedDataset) -> Result<Vec<f64>> {
    check_layout(model, ds)?;
    let mut out = vec![0.0; ds.len()];
    model.reset_states();
    if model.is_stateful() {
        for drug in 0..ds.drugs.len() {
            let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].drug == drug).collect();
            idx.sort_by_key(|&i| ds.samples[i].target);
            for i in idx {
                let (x, _) = ds.batch(&[i])?;
                out[i] = model.predict(&x)?.data()[0];
            }
            model.reset_states();
        }
    } else if !ds.is_empty() {
        let all: Vec<usize> = (0..ds.len()).collect();
        let (x, _) = ds.batch(&all)?;
        out.copy_from_slice(model.predict(&x)?.data());
        model.reset_states();
    }
    Ok(out)
}

pub fn dataset_mse(model: &mut Model, ds: &WindowedDataset) -> Result<f64> {
    let pred = predict_dataset(model, ds)?;
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(&ds.samples).map(|(p, s)| (p - s.y).powi(2)).sum::<f64>() / n)
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged { epoch, loss: f64::NAN },
        other => other,
    }
}

pub fn train(model: &mut Model, train_set: &WindowedDataset, val_set: Option<&WindowedDataset>, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    check_layout(model, train_set)?;
    if let Some(v) = val_set {
        check_layout(model, v)?;
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    if cfg.batch_size > train_set.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            train_set.len()
        )));
    }
    if model.is_stateful() && cfg.shuffle == Some(true) {
        log::warn!("{} is stateful; batches stay in chronological order", model.kind());
    }
    let shuffle = cfg.shuffles(model);
    let adam = cfg.adam();
    let root = RngStream::new(cfg.seed);
    let mut order_rng = root.fork(1);
    let mut dropout_rng = root.fork(2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let lanes = lane_batches(train_set, cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        model.reset_states();
        let plan: Vec<&[usize]> = if model.is_stateful() {
            lanes.iter().map(Vec::as_slice).collect()
        } else {
            if shuffle {
                order_rng.shuffle(&mut order);
            }
            batches(&order, cfg.batch_size)
        };
        let mut sum_sq = 0.0;
        for b in plan {
            align_state(model, b.len());
            let (x, y) = train_set.batch(b)?;
            let (y_hat, cache) = model
                .forward(&x, Mode::Train, Some(&mut dropout_rng))
                .map_err(diverged(epoch))?;
            let (loss, grad) = mse_loss(&y_hat, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            sum_sq += loss * b.len() as f64;
            model.backward(cache, &grad).map_err(diverged(epoch))?;
            let mut params = model.params_mut();
            if let Some(max) = cfg.gradient_clip_norm {
                let norm = clip_grad_norm(&mut params, max);
                if !norm.is_finite() {
                    return Err(Error::Diverged { epoch, loss: norm });
                }
            }
            for p in params {
                adam_step(p, &adam);
            }
        }
        let train_mse = sum_sq / train_set.len() as f64;
        let val_mse = match val_set.filter(|v| !v.is_empty()) {
            Some(v) => Some(dataset_mse(model, v).map_err(diverged(epoch))?),
            None => None,
        };
        log::debug!("epoch {epoch}: train_mse {train_mse:.6}");
        history.epochs.push(EpochStats { train_mse, val_mse });
    }
    model.reset_states();
    Ok(history)
}
