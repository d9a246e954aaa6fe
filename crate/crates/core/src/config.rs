//! Single TOML run configuration with one section per stage.
//!
//! Every field has a default reproducing the benchmark, so an empty file is
//! a valid configuration. Unknown keys are rejected. All randomness derives
//! from the master `seed` through named streams; the `training.seed` field is
//! replaced by the master seed when the pipeline runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{PlantSpec, Reference};
use crate::forecaster::ForecasterConfig;
use crate::mpc::{ControllerKind, Interval, MpcProblem, PenaltyLoopConfig};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Rows of the excitation rollout.
    pub samples: usize,
    /// Generate with the plant noise switched off.
    pub noiseless: bool,
    /// Range of the uniform excitation input.
    pub input_bounds: Interval,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples: 50_000,
            noiseless: false,
            input_bounds: Interval::new(-5.0, 5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Nominal and robust settings are shared; `robust` and
    /// `tighten_inputs` are set per controller.
    pub problem: MpcProblem,
    pub penalty: PenaltyLoopConfig,
    /// Constant input applied while the history window fills.
    pub startup_input: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            problem: MpcProblem::benchmark(false),
            penalty: PenaltyLoopConfig::default(),
            startup_input: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub replicates: usize,
    pub episode_length: usize,
    pub workers: usize,
    pub controllers: Vec<ControllerKind>,
    pub reference: Reference,
    /// One-sided confidence of the tube baseline.
    pub tube_alpha: f64,
    /// Steps after a reference switch excluded from margin averages.
    pub margin_settle: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            replicates: 200,
            episode_length: 160,
            workers: 8,
            controllers: ControllerKind::ALL.to_vec(),
            reference: Reference::default(),
            tube_alpha: 0.95,
            margin_settle: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed.
    pub seed: u64,
    pub plant: PlantSpec,
    pub data: DataConfig,
    pub forecaster: ForecasterConfig,
    pub training: TrainConfig,
    pub mpc: MpcConfig,
    pub campaign: CampaignConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.forecaster.validate()?;
        self.training.validate()?;
        self.mpc.problem.validate()?;
        self.mpc.penalty.validate()?;
        self.campaign.reference.validate()?;
        if self.mpc.problem.horizon != self.forecaster.horizon {
            return Err(Error::Config(format!(
                "mpc horizon {} differs from forecaster horizon {}",
                self.mpc.problem.horizon, self.forecaster.horizon
            )));
        }
        if self.mpc.problem.n_states() != self.forecaster.n_targets {
            return Err(Error::Config(
                "mpc state bounds must cover every forecast target".into(),
            ));
        }
        let b = self.data.input_bounds;
        if !(b.lower < b.upper && b.lower.is_finite() && b.upper.is_finite()) {
            return Err(Error::Config(
                "data input bounds must be finite with lower < upper".into(),
            ));
        }
        if self.data.samples <= self.forecaster.window + self.forecaster.horizon {
            return Err(Error::Config(format!(
                "{} samples cannot fill one window of {} + {} steps",
                self.data.samples, self.forecaster.window, self.forecaster.horizon
            )));
        }
        if self.campaign.episode_length == 0 || self.campaign.workers == 0 {
            return Err(Error::Config("episode_length and workers must be >= 1".into()));
        }
        Ok(())
    }

    /// Training settings with the seed taken from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_round_trip() {
        let text = RunConfig::default().to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sede = 3"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[campaign]\nreplicate = 3").is_err());
        assert!(RunConfig::from_toml("[mpc.penalty]\nmu = 3.0").is_err());
    }

    #[test]
    fn sections_override_defaults() {
        let c = RunConfig::from_toml(
            "seed = 9\n[training]\nepochs = 3\n[campaign]\ncontrollers = [\"tube\"]\n[campaign.reference]\nlevels = [1.0]\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.train_config().seed, 9);
        assert_eq!(c.campaign.controllers, [ControllerKind::Tube]);
        assert_eq!(c.campaign.reference.dwell, 40);
    }

    #[test]
    fn inconsistent_horizons_are_rejected() {
        assert!(RunConfig::from_toml("[mpc.problem]\nhorizon = 5").is_err());
        assert!(RunConfig::from_toml("[mpc.penalty]\nalpha_mu = 1.0").is_err());
    }
}
