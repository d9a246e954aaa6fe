//! Windowed datasets, pinball-loss training and accuracy metrics.

mod dataset;
mod loss;
mod metrics;

pub use dataset::{window_series, DataTable, Dataset};
pub use loss::{quantile_loss_single, quantile_loss_tape, quantile_loss_total};
pub use metrics::{metrics, MetricAccumulator, Metrics, MAPE_EPSILON};

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, Normalization, TimeSeriesWindow};
use crate::seed::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_step_size: usize,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 2e-3,
            lr_step_size: 10,
            lr_decay: 0.95,
            epochs: 200,
            batch_size: 64,
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} must lie in (0, 1]", self.lr_decay)));
        }
        if self.batch_size == 0 || self.lr_step_size == 0 {
            return Err(Error::Config("batch_size and lr_step_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay {} must be >= 0",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_step_size) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for e in &self.curve {
            w.serialize((e.epoch, e.train_loss, e.val_loss))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    weight_decay: f64,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[Tensor], weight_decay: f64) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
            weight_decay,
        }
    }

    fn update(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                m[k] = Self::BETA1 * m[k] + (1.0 - Self::BETA1) * g[k];
                v[k] = Self::BETA2 * v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * (m_hat / (v_hat.sqrt() + Self::EPS) + self.weight_decay * p[k]);
            }
        }
    }
}

fn batch_labels(model: &Forecaster, windows: &[&TimeSeriesWindow]) -> Result<Tensor> {
    let c = model.config();
    let nz = model.normalization();
    let mut labels = Vec::with_capacity(windows.len() * c.horizon * c.n_targets);
    for w in windows {
        let y = w
            .future_targets
            .as_deref()
            .ok_or_else(|| Error::Input("training windows need future targets".into()))?;
        labels.extend_from_slice(y);
    }
    Normalization::normalize_in_place(&mut labels, &nz.target_mean, &nz.target_std);
    Tensor::new(vec![windows.len() * c.horizon, c.n_targets], labels)
}

/// Mean loss over `windows` in normalized units, dropout off.
pub fn evaluate_loss(model: &Forecaster, windows: &[&TimeSeriesWindow], batch_size: usize) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let c = model.config();
    let mut total = 0.0;
    for chunk in windows.chunks(batch_size.max(1)) {
        let tape = Tape::no_grad();
        let inputs = model.batch_inputs(chunk)?;
        let labels = batch_labels(model, chunk)?;
        let outputs = model.forward_with(&tape, model.params(), &inputs, None)?;
        let loss = quantile_loss_tape(&tape, &c.quantile_levels, &outputs, &labels, c.horizon)?;
        total += loss.item() * chunk.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Fits normalization on the training split, then minimizes the pinball loss
/// with AdamW and a step-decay schedule. The parameters with the lowest
/// validation loss are kept (training loss when the validation split is empty).
pub fn train(
    model: &mut Forecaster,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let c = model.config().clone();
    model.set_normalization(dataset.normalization(c.n_targets, c.n_covariates))?;

    let mut order = dataset.train.clone();
    let mut shuffle_rng = seed::rng(config.seed, Stream::Train, 1);
    let mut dropout_rng = seed::rng(config.seed, Stream::Train, 2);
    let mut values: Vec<Vec<f64>> = model.params().iter().map(Tensor::to_vec).collect();
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.shape().to_vec()).collect();
    let mut optimizer = AdamW::new(model.params(), config.weight_decay);
    let validation = dataset.subset(&dataset.validation);

    let mut curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let lr = config.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let windows = dataset.subset(batch);
            let tape = Tape::new();
            let params: Vec<Tensor> = values
                .iter()
                .zip(&shapes)
                .map(|(v, s)| tape.var(s.clone(), v.clone()))
                .collect::<Result<_>>()?;
            let inputs = model.batch_inputs(&windows)?;
            let labels = batch_labels(model, &windows)?;
            let outputs = model.forward_with(&tape, &params, &inputs, Some(&mut dropout_rng))?;
            let loss = quantile_loss_tape(&tape, &c.quantile_levels, &outputs, &labels, c.horizon)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            epoch_loss += value * batch.len() as f64;
            let mut grads = tape.backward(&loss)?;
            let grads: Vec<Vec<f64>> = params.iter().map(|p| grads.take(p)).collect::<Result<_>>()?;
            optimizer.update(&mut values, &grads, lr);
        }
        let current: Vec<Tensor> = values
            .iter()
            .zip(&shapes)
            .map(|(v, s)| Tensor::new(s.clone(), v.clone()))
            .collect::<Result<_>>()?;
        model.set_params(current.clone());
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = evaluate_loss(model, &validation, 1024)?;
        if !val_loss.is_finite() && !validation.is_empty() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        let entry = EpochLoss {
            epoch,
            train_loss,
            val_loss,
        };
        on_epoch(&entry);
        curve.push(entry);
        let score = if validation.is_empty() { train_loss } else { val_loss };
        if best.as_ref().is_none_or(|(_, b, _)| score < *b) {
            best = Some((epoch, score, current));
        }
    }
    let (best_epoch, best_val_loss) = match best {
        Some((epoch, score, params)) => {
            model.set_params(params);
            (epoch, score)
        }
        None => (0, f64::NAN),
    };
    Ok(TrainReport {
        curve,
        best_epoch,
        best_val_loss,
    })
}
