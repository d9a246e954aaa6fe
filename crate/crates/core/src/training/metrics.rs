use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, QuantileForecast, TimeSeriesWindow};

/// Labels with magnitude below this are skipped by MAPE.
pub const MAPE_EPSILON: f64 = 1e-3;

/// Held-out accuracy of the median and calibration of the outer band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Per target dimension, as a fraction (0.05 = 5%).
    pub mape: Vec<f64>,
    pub rrmse: Vec<f64>,
    /// Fraction of labels inside `[lowest, highest]` quantile level.
    pub coverage: f64,
    pub coverage_per_target: Vec<f64>,
    pub n_windows: usize,
}

/// Accumulates residual statistics of median predictions.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    abs_pct: Vec<f64>,
    pct_count: Vec<usize>,
    sq_err: Vec<f64>,
    sq_y: Vec<f64>,
    inside: Vec<usize>,
    count: Vec<usize>,
}

impl MetricAccumulator {
    pub fn new(n_targets: usize) -> Self {
        Self {
            abs_pct: vec![0.0; n_targets],
            pct_count: vec![0; n_targets],
            sq_err: vec![0.0; n_targets],
            sq_y: vec![0.0; n_targets],
            inside: vec![0; n_targets],
            count: vec![0; n_targets],
        }
    }

    /// Adds one labelled prediction for target `d`.
    pub fn push(&mut self, d: usize, y: f64, median: f64, lower: f64, upper: f64) {
        let e = y - median;
        if y.abs() >= MAPE_EPSILON {
            self.abs_pct[d] += (e / y).abs();
            self.pct_count[d] += 1;
        }
        self.sq_err[d] += e * e;
        self.sq_y[d] += y * y;
        self.inside[d] += usize::from(lower <= y && y <= upper);
        self.count[d] += 1;
    }

    pub fn merge(mut self, other: Self) -> Self {
        for d in 0..self.count.len() {
            self.abs_pct[d] += other.abs_pct[d];
            self.pct_count[d] += other.pct_count[d];
            self.sq_err[d] += other.sq_err[d];
            self.sq_y[d] += other.sq_y[d];
            self.inside[d] += other.inside[d];
            self.count[d] += other.count[d];
        }
        self
    }

    pub fn finish(&self, n_windows: usize) -> Metrics {
        let ratio = |a: f64, b: usize| if b == 0 { f64::NAN } else { a / b as f64 };
        let d = self.count.len();
        Metrics {
            mape: (0..d).map(|i| ratio(self.abs_pct[i], self.pct_count[i])).collect(),
            rrmse: (0..d).map(|i| (self.sq_err[i] / self.sq_y[i]).sqrt()).collect(),
            coverage: ratio(self.inside.iter().sum::<usize>() as f64, self.count.iter().sum()),
            coverage_per_target: (0..d).map(|i| ratio(self.inside[i] as f64, self.count[i])).collect(),
            n_windows,
        }
    }

    fn push_forecast(&mut self, f: &QuantileForecast, labels: &[f64]) {
        for t in 0..f.horizon {
            for d in 0..f.n_targets {
                self.push(
                    d,
                    labels[t * f.n_targets + d],
                    f.median(t, d),
                    f.lower(t, d),
                    f.upper(t, d),
                );
            }
        }
    }
}

/// MAPE and RRMSE of the median plus outer-band coverage over labelled windows.
pub fn metrics(model: &Forecaster, windows: &[&TimeSeriesWindow]) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(Error::Input("metrics need at least one window".into()));
    }
    let d = model.config().n_targets;
    let acc = windows
        .par_chunks(256)
        .map(|chunk| -> Result<MetricAccumulator> {
            let owned: Vec<TimeSeriesWindow> = chunk.iter().map(|w| (*w).clone()).collect();
            let forecasts = model.forecast_batch(&owned)?;
            let mut acc = MetricAccumulator::new(d);
            for (w, f) in chunk.iter().zip(&forecasts) {
                let labels = w
                    .future_targets
                    .as_deref()
                    .ok_or_else(|| Error::Input("metrics need labelled windows".into()))?;
                acc.push_forecast(f, labels);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .reduce(MetricAccumulator::merge)
        .expect("at least one chunk");
    Ok(acc.finish(windows.len()))
}
