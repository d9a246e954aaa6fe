//! End-to-end stages driven by a [`RunConfig`]: data generation, training
//! and closed-loop campaigns.

use crate::config::RunConfig;
use crate::error::Result;
use crate::evaluation::{run_campaign, CampaignReport, CampaignSetup, ClosedLoopTrace};
use crate::forecaster::Forecaster;
use crate::mpc::ControllerKind;
use crate::plant::{generate_excitation, rollout, LtiPlant, Plant};
use crate::seed::{self, Stream};
use crate::training::{metrics, train, window_series, DataTable, Dataset, EpochLoss, Metrics, TrainReport};

/// Excitation rollout of the configured plant.
pub fn generate_data(config: &RunConfig) -> Result<DataTable> {
    let p = &config.plant;
    let sigma = if config.data.noiseless { 0.0 } else { p.sigma };
    let mut plant = LtiPlant::new(p.a, p.b, sigma, seed::rng(config.seed, Stream::DataNoise, 0))?;
    plant.reset(p.x0);
    let bounds = (config.data.input_bounds.lower, config.data.input_bounds.upper);
    let inputs = generate_excitation(
        config.data.samples,
        bounds,
        &mut seed::rng(config.seed, Stream::Data, 0),
    );
    Ok(DataTable::from_trajectory(&rollout(&mut plant, &inputs)?))
}

/// Windows of `table` split into train, validation and test sets.
pub fn dataset(config: &RunConfig, table: &DataTable) -> Result<Dataset> {
    let f = &config.forecaster;
    let (targets, covariates) = table.aligned();
    let windows = window_series(
        &targets,
        &covariates,
        table.n_targets,
        table.n_covariates(),
        f.window,
        f.horizon,
    )?;
    Dataset::split(windows, &mut seed::rng(config.seed, Stream::Train, 0))
}

pub struct Trained {
    pub model: Forecaster,
    pub report: TrainReport,
    /// Accuracy on the held-out test windows.
    pub test_metrics: Metrics,
}

pub fn train_model(config: &RunConfig, table: &DataTable, on_epoch: impl FnMut(&EpochLoss)) -> Result<Trained> {
    let data = dataset(config, table)?;
    let mut model = Forecaster::build(config.forecaster.clone(), config.seed)?;
    let report = train(&mut model, &data, &config.train_config(), on_epoch)?;
    let test_metrics = metrics(&model, &data.subset(&data.test))?;
    Ok(Trained {
        model,
        report,
        test_metrics,
    })
}

pub fn campaign_setup<'a>(
    config: &RunConfig,
    kind: ControllerKind,
    model: Option<&'a Forecaster>,
) -> CampaignSetup<'a> {
    CampaignSetup {
        kind,
        model,
        plant: config.plant.clone(),
        problem: config.mpc.problem.clone(),
        penalty: config.mpc.penalty.clone(),
        tube_alpha: config.campaign.tube_alpha,
        startup_input: config.mpc.startup_input,
        startup_steps: model.map_or(config.forecaster.window, |m| m.config().window),
        reference: config.campaign.reference.clone(),
        episode_length: config.campaign.episode_length,
        master_seed: config.seed,
        margin_settle: config.campaign.margin_settle,
    }
}

/// Campaign of `config.campaign.replicates` episodes for one controller.
pub fn campaign(
    config: &RunConfig,
    kind: ControllerKind,
    model: Option<&Forecaster>,
) -> Result<(CampaignReport, Vec<ClosedLoopTrace>)> {
    let setup = campaign_setup(config, kind, model);
    run_campaign(&setup, config.campaign.replicates, config.campaign.workers)
}
