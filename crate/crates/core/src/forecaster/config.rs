use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the dense multi-horizon forecaster.
///
/// Defaults reproduce the benchmark setup: one encoder and one decoder layer,
/// decoder output width 16, hidden width 128, temporal-decoder hidden width 32,
/// dropout 0.2 and layer normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterConfig {
    /// Lookback length `w`.
    pub window: usize,
    /// Forecast horizon `N`.
    pub horizon: usize,
    /// State dimension `D`.
    pub n_targets: usize,
    /// Covariate columns per step; the control input is column 0.
    pub n_covariates: usize,
    /// Strictly increasing levels in (0, 1); must contain 0.5.
    pub quantile_levels: Vec<f64>,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_size: usize,
    pub decoder_hidden: usize,
    pub decoder_output_dim: usize,
    /// Width of the per-step covariate projection.
    pub temporal_width: usize,
    pub dropout: f64,
    pub layer_norm: bool,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            window: 10,
            horizon: 10,
            n_targets: 2,
            n_covariates: 1,
            quantile_levels: vec![0.05, 0.5, 0.95],
            encoder_layers: 1,
            decoder_layers: 1,
            hidden_size: 128,
            decoder_hidden: 32,
            decoder_output_dim: 16,
            temporal_width: 4,
            dropout: 0.2,
            layer_norm: true,
        }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.window == 0 || self.horizon == 0 {
            return bad(format!(
                "window ({}) and horizon ({}) must be >= 1",
                self.window, self.horizon
            ));
        }
        if self.n_targets == 0 || self.n_covariates == 0 {
            return bad("n_targets and n_covariates must be >= 1".into());
        }
        let levels = &self.quantile_levels;
        if levels.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return bad(format!("quantile levels {levels:?} must lie in (0, 1)"));
        }
        if levels.windows(2).any(|p| p[0] >= p[1]) {
            return bad(format!("quantile levels {levels:?} must be strictly increasing"));
        }
        if !levels.contains(&0.5) {
            return bad(format!("quantile levels {levels:?} must contain 0.5"));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return bad("encoder_layers and decoder_layers must be >= 1".into());
        }
        if [
            self.hidden_size,
            self.decoder_hidden,
            self.decoder_output_dim,
            self.temporal_width,
        ]
        .contains(&0)
        {
            return bad("layer widths must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn n_levels(&self) -> usize {
        self.quantile_levels.len()
    }

    pub fn median_index(&self) -> usize {
        self.quantile_levels
            .iter()
            .position(|&q| q == 0.5)
            .expect("validated config contains the median")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ForecasterConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_levels() {
        for levels in [vec![0.5, 0.05], vec![0.05, 0.95], vec![0.0, 0.5], vec![0.5, 0.5]] {
            let c = ForecasterConfig {
                quantile_levels: levels,
                ..Default::default()
            };
            assert!(c.validate().is_err());
        }
        let c = ForecasterConfig {
            window: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
