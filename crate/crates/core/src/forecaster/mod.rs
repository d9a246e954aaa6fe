//! Dense multi-horizon quantile forecaster.
//!
//! The network maps a lookback window of states plus past and future
//! covariates to every quantile trajectory over the horizon in one forward
//! pass. Inputs and outputs are standardized with statistics stored alongside
//! the weights, so callers always work in raw plant units.

mod checkpoint;
mod config;
mod data;
mod network;

pub use checkpoint::FORMAT_VERSION;
pub use config::ForecasterConfig;
pub use data::{Normalization, QuantileForecast, TimeSeriesWindow};

use network::{Layout, Net, NetInputs};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::seed::{self, Rng, Stream};

#[derive(Clone, Debug)]
pub struct Forecaster {
    config: ForecasterConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
    normalization: Normalization,
}

impl Forecaster {
    /// Builds a network with weights drawn from the `Init` stream of `seed`.
    pub fn build(config: ForecasterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, Stream::Init, 0);
        let (layout, set) = Layout::build(&config, Some(&mut rng));
        let normalization = Normalization::identity(config.n_targets, config.n_covariates);
        Ok(Self {
            config,
            layout,
            names: set.names,
            params: set.values,
            normalization,
        })
    }

    /// Network whose weights and biases are all zero (layer-norm scales stay 1).
    pub fn zeroed(config: ForecasterConfig) -> Result<Self> {
        config.validate()?;
        let (layout, set) = Layout::build(&config, None);
        let normalization = Normalization::identity(config.n_targets, config.n_covariates);
        Ok(Self {
            config,
            layout,
            names: set.names,
            params: set.values,
            normalization,
        })
    }

    pub fn config(&self) -> &ForecasterConfig {
        &self.config
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, normalization: Normalization) -> Result<()> {
        normalization.validate(&self.config)?;
        self.normalization = normalization;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// `(name, tensor)` pairs in a stable order.
    pub fn parameters(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub(crate) fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn set_params(&mut self, params: Vec<Tensor>) {
        debug_assert_eq!(params.len(), self.params.len());
        self.params = params.into_iter().map(|p| p.detach()).collect();
    }

    /// Normalized, detached network inputs for a batch of windows.
    pub(crate) fn batch_inputs(&self, windows: &[&TimeSeriesWindow]) -> Result<NetInputs> {
        let c = &self.config;
        let nz = &self.normalization;
        let (w, n, d, m) = (c.window, c.horizon, c.n_targets, c.n_covariates);
        let b = windows.len();
        let mut past_targets = Vec::with_capacity(b * w * d);
        let mut past_cov = Vec::with_capacity(b * w * m);
        let mut future_cov = Vec::with_capacity(b * n * m);
        for win in windows {
            win.check(c)?;
            past_targets.extend_from_slice(&win.past_targets);
            past_cov.extend_from_slice(&win.past_covariates);
            future_cov.extend_from_slice(&win.future_covariates);
        }
        Normalization::normalize_in_place(&mut past_targets, &nz.target_mean, &nz.target_std);
        Normalization::normalize_in_place(&mut past_cov, &nz.covariate_mean, &nz.covariate_std);
        Normalization::normalize_in_place(&mut future_cov, &nz.covariate_mean, &nz.covariate_std);
        Ok(NetInputs {
            past_targets: Tensor::new(vec![b, w * d], past_targets)?,
            past_covariates: Tensor::new(vec![b * w, m], past_cov)?,
            future_covariates: Tensor::new(vec![b * n, m], future_cov)?,
        })
    }

    /// Forward pass in normalized units with explicit parameters (tape leaves
    /// during training). Returns one `[B*N, D]` tensor per quantile level.
    pub(crate) fn forward_with(
        &self,
        tape: &Tape,
        params: &[Tensor],
        inputs: &NetInputs,
        dropout: Option<&mut Rng>,
    ) -> Result<Vec<Tensor>> {
        Net {
            config: &self.config,
            layout: &self.layout,
            params,
        }
        .forward(tape, inputs, dropout)
    }

    /// Inference forecast in raw units, dropout off, crossings repaired.
    pub fn forecast(&self, window: &TimeSeriesWindow) -> Result<QuantileForecast> {
        Ok(self.forecast_batch(std::slice::from_ref(window))?.remove(0))
    }

    pub fn forecast_batch(&self, windows: &[TimeSeriesWindow]) -> Result<Vec<QuantileForecast>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&TimeSeriesWindow> = windows.iter().collect();
        let inputs = self.batch_inputs(&refs)?;
        let tape = Tape::no_grad();
        let outputs = self.forward_with(&tape, &self.params, &inputs, None)?;
        Ok(self.assemble(&outputs, windows.len()))
    }

    /// Converts per-level normalized outputs into raw-unit forecasts.
    pub(crate) fn assemble(&self, outputs: &[Tensor], batch: usize) -> Vec<QuantileForecast> {
        let c = &self.config;
        let nz = &self.normalization;
        let (n, d, l) = (c.horizon, c.n_targets, c.n_levels());
        (0..batch)
            .map(|b| {
                let mut values = vec![0.0; n * d * l];
                for (j, out) in outputs.iter().enumerate() {
                    let data = out.data();
                    for t in 0..n {
                        for k in 0..d {
                            let v = data[(b * n + t) * d + k];
                            values[(t * d + k) * l + j] = v * nz.target_std[k] + nz.target_mean[k];
                        }
                    }
                }
                let mut f = QuantileForecast {
                    horizon: n,
                    n_targets: d,
                    levels: c.quantile_levels.clone(),
                    values,
                };
                f.repair_crossings();
                f
            })
            .collect()
    }

    /// Forecast with the future covariates supplied as a tape tensor
    /// `future_covariates: [N, m]` in raw units, so that losses built from the
    /// outputs can be differentiated with respect to them. The covariates
    /// stored in `window.future_covariates` are ignored.
    ///
    /// Returns one `[N, D]` tensor per quantile level in raw units. Crossing
    /// repair is not applied here; callers that need ordered bounds must
    /// constrain every level.
    pub fn forecast_on_tape(
        &self,
        tape: &Tape,
        window: &TimeSeriesWindow,
        future_covariates: &Tensor,
    ) -> Result<Vec<Tensor>> {
        let c = &self.config;
        let nz = &self.normalization;
        if future_covariates.shape() != [c.horizon, c.n_covariates] {
            return Err(Error::Shape {
                op: "forecast_on_tape",
                lhs: future_covariates.shape().to_vec(),
                rhs: vec![c.horizon, c.n_covariates],
            });
        }
        let mut inputs = self.batch_inputs(&[window])?;
        let inv: Vec<f64> = nz.covariate_std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = nz
            .covariate_mean
            .iter()
            .zip(&nz.covariate_std)
            .map(|(m, s)| -m / s)
            .collect();
        inputs.future_covariates = tape.scale_shift(future_covariates, &inv, &shift)?;
        let outputs = self.forward_with(tape, &self.params, &inputs, None)?;
        outputs
            .iter()
            .map(|o| tape.scale_shift(o, &nz.target_std, &nz.target_mean))
            .collect()
    }

    /// Writes the checkpoint container to `path`.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        checkpoint::load(path)
    }

    pub(crate) fn from_parts(
        config: ForecasterConfig,
        normalization: Normalization,
        weights: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        model.set_normalization(normalization)?;
        if weights.len() != model.params.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} weight arrays, architecture expects {}",
                weights.len(),
                model.params.len()
            )));
        }
        for ((name, data), (expected, slot)) in weights.into_iter().zip(model.names.iter().zip(&mut model.params)) {
            if &name != expected || data.len() != slot.len() {
                return Err(Error::CorruptCheckpoint(format!(
                    "weight `{name}` ({} values) does not match `{expected}` ({} values)",
                    data.len(),
                    slot.len()
                )));
            }
            *slot = Tensor::new(slot.shape().to_vec(), data)?;
        }
        Ok(model)
    }
}
