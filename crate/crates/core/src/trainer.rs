//! Optimization loop: cross-entropy, Adam, per-step cosine annealing,
//! global-norm clipping and early stopping on validation accuracy.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SeriesDataset;
use crate::error::{Error, Result};
use crate::model::WaveFormer;
use crate::params::{ForwardCtx, ModelParams};
use crate::tensor::{no_grad, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub val_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            lr_max: 1e-3,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            patience: 20,
            val_ratio: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0 <= self.lr_min && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            ));
        }
        if self.patience == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("epochs, batch_size and patience must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            ));
        }
        if !(0.0..1.0).contains(&self.val_ratio) {
            return bad(format!("val_ratio {} outside [0, 1)", self.val_ratio));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRow>,
    pub best_epoch: usize,
    pub test_acc: Option<f64>,
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(πt/T))`; `lr_max` when `T = 0`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let frac = t.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Rescales all gradients to global L2 norm `max_norm` when above it.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| {
            let g = g.to_f64().unwrap_or(f64::NAN);
            g * g
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Bias-corrected Adam with first and second moments kept in f64.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Real>(params: &ModelParams<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .iter()
            .map(|(_, _, t)| vec![0.0; t.numel()])
            .collect();
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step<T: Real>(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &[Vec<T>],
        lr: f64,
    ) -> Result<()> {
        for (id, g) in params.ids().zip(grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(params.name(id).to_string()));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let updated: Vec<T> = params
                .get(id)
                .data()
                .iter()
                .zip(&grads[i])
                .enumerate()
                .map(|(j, (&p, &g))| {
                    let g = g.to_f64().unwrap_or(0.0);
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                    let step = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                    p - T::lit(step)
                })
                .collect();
            params.set_data(id, updated)?;
        }
        Ok(())
    }
}

/// Mean cross-entropy and accuracy in evaluation mode.
pub fn evaluate<T: Real>(
    model: &WaveFormer<T>,
    ds: &SeriesDataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let _guard = no_grad();
    let mut ctx = ForwardCtx::eval();
    let (mut loss, mut correct) = (0.0, 0);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = ds.batch::<T>(chunk);
        let logits = model.forward(&x, &mut ctx)?;
        loss += logits
            .cross_entropy(&y)?
            .item()
            .to_f64()
            .unwrap_or(f64::NAN)
            * chunk.len() as f64;
        correct += logits
            .argmax_rows()
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// `matrix[true][predicted]` counts.
pub fn confusion<T: Real>(
    model: &WaveFormer<T>,
    ds: &SeriesDataset,
    batch_size: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut matrix = vec![vec![0; ds.classes]; ds.classes];
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = ds.batch::<T>(chunk);
        for (p, t) in model.predict(&x)?.into_iter().zip(y) {
            matrix[t][p] += 1;
        }
    }
    Ok(matrix)
}

fn improves(acc: f64, loss: f64, best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((best_acc, best_loss)) => acc > best_acc || (acc == best_acc && loss < best_loss),
    }
}

/// Trains in place and returns the per-epoch metrics.
///
/// A stratified `val_ratio` share of `train` is held out for early
/// stopping; with `val_ratio = 0` the training set itself is monitored.
/// The best epoch's parameters are restored before `test` is scored.
pub fn train_loop<T: Real>(
    model: &mut WaveFormer<T>,
    train: &SeriesDataset,
    test: Option<&SeriesDataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<RunMetrics> {
    cfg.validate()?;
    let (fit, val) = if cfg.val_ratio > 0.0 {
        train.stratified_split(cfg.val_ratio, cfg.seed)
    } else {
        (train.clone(), train.clone())
    };
    if fit.is_empty() {
        return Err(Error::Integrity(
            "no training samples left after the validation split".into(),
        ));
    }
    let val = if val.is_empty() { fit.clone() } else { val };

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(2);
    let mut ctx = ForwardCtx::train(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::new(model.params(), cfg.beta1, cfg.beta2, cfg.eps);
    let steps_per_epoch = fit.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;

    let mut metrics = RunMetrics::default();
    let mut best: Option<(f64, f64)> = None;
    let mut best_params = model.params().snapshot();
    let mut stale = 0;
    let mut step = 0;
    let mut order: Vec<usize> = (0..fit.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut correct, mut norm_sum) = (0.0, 0, 0.0);
        let mut lr = cfg.lr_max;
        for chunk in order.chunks(cfg.batch_size) {
            lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
            let (x, y) = fit.batch::<T>(chunk);
            let logits = model.forward(&x, &mut ctx)?;
            let loss = logits.cross_entropy(&y)?;
            let loss_value = loss.item().to_f64().unwrap_or(f64::NAN);
            if !loss_value.is_finite() {
                model.params_mut().restore(best_params)?;
                return Err(Error::Diverged {
                    epoch,
                    metrics: Box::new(metrics),
                });
            }
            loss.backward()?;
            let mut grads = model.params().grads();
            norm_sum += clip_grad_norm(&mut grads, cfg.clip_norm);
            adam.step(model.params_mut(), &grads, lr)?;
            loss_sum += loss_value * chunk.len() as f64;
            correct += logits
                .argmax_rows()
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
            step += 1;
        }
        let (val_loss, val_acc) = evaluate(model, &val, cfg.batch_size)?;
        let row = EpochRow {
            epoch,
            lr,
            train_loss: loss_sum / fit.len() as f64,
            train_acc: correct as f64 / fit.len() as f64,
            val_loss,
            val_acc,
            grad_norm: norm_sum / steps_per_epoch as f64,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} acc {:.3} val_loss {:.4} val_acc {:.3}",
            row.train_loss,
            row.train_acc,
            row.val_loss,
            row.val_acc
        );
        on_epoch(&row);
        metrics.epochs.push(row);
        if improves(val_acc, val_loss, best) {
            best = Some((val_acc, val_loss));
            best_params = model.params().snapshot();
            metrics.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    model.params_mut().restore(best_params)?;
    if let Some(test) = test {
        metrics.test_acc = Some(evaluate(model, test, cfg.batch_size)?.1);
    }
    Ok(metrics)
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc,grad_norm,wall_ms";

pub fn write_metrics_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Integrity(format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(',')).map_err(to_err)?;
    }
    for row in rows {
        w.serialize(row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.lines().next() != Some(METRICS_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("header must be `{METRICS_HEADER}`"),
        });
    }
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })
        })
        .collect()
}
