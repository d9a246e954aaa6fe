use serde::{Deserialize, Serialize};

use super::ForecasterConfig;
use crate::error::{Error, Result};

/// One forecasting sample. All arrays are row-major with time as the outer axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesWindow {
    /// `w x D`: states `x_{k-w+1..k}`.
    pub past_targets: Vec<f64>,
    /// `w x m`: covariates `u_{k-w..k-1}` (plus optional extra columns).
    pub past_covariates: Vec<f64>,
    /// `N x m`: covariates `u_{k..k+N-1}`.
    pub future_covariates: Vec<f64>,
    /// `N x D`: states `x_{k+1..k+N}`; absent at inference time.
    pub future_targets: Option<Vec<f64>>,
}

impl TimeSeriesWindow {
    pub fn check(&self, config: &ForecasterConfig) -> Result<()> {
        let (w, n, d, m) = (config.window, config.horizon, config.n_targets, config.n_covariates);
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Input(format!("{name} has {got} values, expected {want}")))
            }
        };
        check("past_targets", self.past_targets.len(), w * d)?;
        check("past_covariates", self.past_covariates.len(), w * m)?;
        check("future_covariates", self.future_covariates.len(), n * m)?;
        if let Some(y) = &self.future_targets {
            check("future_targets", y.len(), n * d)?;
        }
        Ok(())
    }
}

/// Quantile trajectories over the horizon; `values` is `N x D x l`, ordered by level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub horizon: usize,
    pub n_targets: usize,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
}

impl QuantileForecast {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    fn idx(&self, t: usize, d: usize, j: usize) -> usize {
        (t * self.n_targets + d) * self.levels.len() + j
    }

    pub fn get(&self, t: usize, d: usize, level: usize) -> f64 {
        self.values[self.idx(t, d, level)]
    }

    pub fn level_index(&self, q: f64) -> Option<usize> {
        self.levels.iter().position(|&l| l == q)
    }

    pub fn median(&self, t: usize, d: usize) -> f64 {
        let j = self.level_index(0.5).expect("forecast carries the median");
        self.get(t, d, j)
    }

    /// Highest quantile level.
    pub fn upper(&self, t: usize, d: usize) -> f64 {
        self.get(t, d, self.levels.len() - 1)
    }

    /// Lowest quantile level.
    pub fn lower(&self, t: usize, d: usize) -> f64 {
        self.get(t, d, 0)
    }

    /// `N x D` median trajectory.
    pub fn median_trajectory(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.horizon * self.n_targets);
        for t in 0..self.horizon {
            for d in 0..self.n_targets {
                out.push(self.median(t, d));
            }
        }
        out
    }

    /// Sorts the quantile axis of every `(t, d)` cell so bounds never cross.
    pub fn repair_crossings(&mut self) {
        for cell in self.values.chunks_mut(self.levels.len()) {
            cell.sort_by(f64::total_cmp);
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.values
            .chunks(self.levels.len())
            .all(|c| c.windows(2).all(|p| p[0] <= p[1]))
    }
}

/// Per-feature standardization statistics from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
    pub covariate_mean: Vec<f64>,
    pub covariate_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(n_targets: usize, n_covariates: usize) -> Self {
        Self {
            target_mean: vec![0.0; n_targets],
            target_std: vec![1.0; n_targets],
            covariate_mean: vec![0.0; n_covariates],
            covariate_std: vec![1.0; n_covariates],
        }
    }

    /// Mean and standard deviation of each column of row-major `rows`; a
    /// zero-variance column gets unit scale.
    pub fn column_stats(rows: &[f64], cols: usize) -> (Vec<f64>, Vec<f64>) {
        let n = (rows.len() / cols).max(1) as f64;
        let mut mean = vec![0.0; cols];
        for row in rows.chunks(cols) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; cols];
        for row in rows.chunks(cols) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        (mean, std)
    }

    pub fn normalize_in_place(values: &mut [f64], mean: &[f64], std: &[f64]) {
        for row in values.chunks_mut(mean.len()) {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn denormalize_in_place(values: &mut [f64], mean: &[f64], std: &[f64]) {
        for row in values.chunks_mut(mean.len()) {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
                *v = *v * s + m;
            }
        }
    }

    pub fn validate(&self, config: &ForecasterConfig) -> Result<()> {
        let ok = self.target_mean.len() == config.n_targets
            && self.target_std.len() == config.n_targets
            && self.covariate_mean.len() == config.n_covariates
            && self.covariate_std.len() == config.n_covariates
            && self
                .target_std
                .iter()
                .chain(&self.covariate_std)
                .all(|s| *s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "normalization statistics do not match the configuration".into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crossing_repair_sorts_levels() {
        let mut f = QuantileForecast {
            horizon: 2,
            n_targets: 1,
            levels: vec![0.05, 0.5, 0.95],
            values: vec![1.0, 0.0, 2.0, 3.0, 2.0, 1.0],
        };
        assert!(!f.is_monotone());
        f.repair_crossings();
        assert_eq!(f.values, vec![0.0, 1.0, 2.0, 1.0, 2.0, 3.0]);
        assert_eq!((f.lower(1, 0), f.median(1, 0), f.upper(1, 0)), (1.0, 2.0, 3.0));
    }

    proptest! {
        #[test]
        fn normalization_round_trip(values in proptest::collection::vec(-1e3f64..1e3, 3..60)) {
            let cols = 3;
            let n = values.len() / cols * cols;
            let original = values[..n].to_vec();
            let (mean, std) = Normalization::column_stats(&original, cols);
            let mut v = original.clone();
            Normalization::normalize_in_place(&mut v, &mean, &std);
            Normalization::denormalize_in_place(&mut v, &mean, &std);
            for (a, b) in v.iter().zip(&original) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
