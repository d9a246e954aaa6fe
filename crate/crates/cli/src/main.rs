//! `qmpc` command-line driver.
//!
//! Settings come from one TOML file (`--config`); command-line flags override
//! the file. Exit codes: 0 success, 1 usage or configuration error, 2
//! numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qmpc::config::RunConfig;
use qmpc::evaluation::CampaignReport;
use qmpc::forecaster::Forecaster;
use qmpc::mpc::{write_plan_dump, write_solve_log, ControllerKind};
use qmpc::pipeline;
use qmpc::training::DataTable;

#[derive(Parser, Debug)]
#[command(name = "qmpc", version, about = "Quantile-forecast MPC pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out the plant under a uniform excitation input and write the CSV.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Switch the plant noise off.
        #[arg(long)]
        noiseless: bool,
    },
    /// Train the forecaster; writes the checkpoint and `<out>.loss.csv`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// One closed-loop episode per controller.
    Run {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        controller: Option<ControllerKind>,
        /// Plant-noise replicate index.
        #[arg(long, default_value_t = 0)]
        replicate: u32,
        /// Also dump every accepted plan as JSON.
        #[arg(long)]
        plans: bool,
    },
    /// Monte-Carlo campaign per controller; writes reports and aggregates.
    Campaign {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        controller: Option<ControllerKind>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Side-by-side summary of campaign reports.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also write the summary as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> Result<ControllerKind, String> {
    s.parse().map_err(|e: qmpc::Error| e.to_string())
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn load_model(path: Option<&Path>, kinds: &[ControllerKind]) -> Result<Option<Forecaster>> {
    let needed = kinds.iter().any(|k| *k != ControllerKind::Tube);
    match path {
        Some(p) => Ok(Some(Forecaster::load(p)?)),
        None if needed => bail!(qmpc::Error::Config(
            "--model is required for the nominal and robust controllers".into()
        )),
        None => Ok(None),
    }
}

fn kinds(config: &RunConfig, flag: Option<ControllerKind>) -> Vec<ControllerKind> {
    flag.map_or_else(|| config.campaign.controllers.clone(), |k| vec![k])
}

fn gen_data(mut config: RunConfig, out: &Path, noiseless: bool) -> Result<()> {
    config.data.noiseless |= noiseless;
    config.validate()?;
    let table = pipeline::generate_data(&config)?;
    table.write_csv(out)?;
    eprintln!(
        "wrote {} rows to {} (seed {})",
        table.rows(),
        out.display(),
        config.seed
    );
    Ok(())
}

fn train(mut config: RunConfig, data: &Path, out: &Path, epochs: Option<usize>) -> Result<()> {
    if let Some(e) = epochs {
        config.training.epochs = e;
    }
    config.validate()?;
    let table = DataTable::read_csv(data)?;
    let trained = pipeline::train_model(&config, &table, |e| {
        eprintln!("epoch {:>4}  train {:.6}  val {:.6}", e.epoch, e.train_loss, e.val_loss)
    })?;
    trained.model.save(out)?;
    let mut curve = out.as_os_str().to_owned();
    curve.push(".loss.csv");
    trained.report.write_csv(Path::new(&curve))?;
    let m = &trained.test_metrics;
    eprintln!(
        "best epoch {}  test MAPE {:?}  RRMSE {:?}  coverage {:.4}",
        trained.report.best_epoch, m.mape, m.rrmse, m.coverage
    );
    Ok(())
}

#[derive(Serialize)]
struct RunLog {
    seed: u64,
    replicate: u32,
    controllers: Vec<ControllerKind>,
}

fn run(
    config: RunConfig,
    model: Option<&Path>,
    out: &Path,
    kind: Option<ControllerKind>,
    replicate: u32,
    plans: bool,
) -> Result<()> {
    config.validate()?;
    let kinds = kinds(&config, kind);
    let model = load_model(model, &kinds)?;
    create_dir(out)?;
    for &k in &kinds {
        let setup = pipeline::campaign_setup(&config, k, model.as_ref());
        let trace = setup.episode_recording(replicate, plans)?;
        let name = k.name();
        trace.write_csv(&out.join(format!("episode_{name}.csv")))?;
        write_solve_log(&out.join(format!("solve_log_{name}.csv")), &trace.steps())?;
        if plans {
            write_plan_dump(&out.join(format!("plans_{name}.json")), &trace.steps())?;
        }
        eprintln!(
            "{name}: seed {} replicate {replicate}, {} steps",
            config.seed,
            trace.records.len()
        );
    }
    let log = RunLog {
        seed: config.seed,
        replicate,
        controllers: kinds,
    };
    std::fs::write(out.join("run.json"), serde_json::to_string_pretty(&log)?)?;
    Ok(())
}

fn campaign(
    mut config: RunConfig,
    model: Option<&Path>,
    out: &Path,
    kind: Option<ControllerKind>,
    replicates: Option<usize>,
    workers: Option<usize>,
) -> Result<()> {
    if let Some(r) = replicates {
        config.campaign.replicates = r;
    }
    if let Some(w) = workers {
        config.campaign.workers = w;
    }
    config.validate()?;
    let kinds = kinds(&config, kind);
    let model = load_model(model, &kinds)?;
    create_dir(out)?;
    for &k in &kinds {
        let (report, _) = pipeline::campaign(&config, k, model.as_ref())?;
        let name = k.name();
        report.write_json(&out.join(format!("report_{name}.json")))?;
        report.write_aggregates_csv(&out.join(format!("aggregates_{name}.csv")))?;
        if let Some(t) = &report.timing {
            std::fs::write(
                out.join(format!("timing_{name}.json")),
                serde_json::to_string_pretty(t)?,
            )?;
        }
        eprintln!(
            "{name}: failure rate {:.4} over {} replicates ({} aborted)",
            report.failure_rate,
            report.n_replicates - report.n_aborted,
            report.n_aborted
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    report: String,
    controller: ControllerKind,
    replicates: usize,
    aborted: usize,
    episode_length: usize,
    failure_rate: f64,
    tracking_r2_median: Option<f64>,
    tracking_r2_mean: Option<f64>,
    margins: Vec<(String, Option<f64>)>,
    fallback_steps: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn compare(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let reports: Vec<CampaignReport> = paths
        .iter()
        .map(|p| CampaignReport::read_json(p))
        .collect::<Result<_, _>>()?;
    let lengths: Vec<usize> = reports.iter().map(|r| r.episode_length).collect();
    if lengths.windows(2).any(|w| w[0] != w[1]) {
        eprintln!("warning: reports have different episode lengths {lengths:?}");
    }
    let rows: Vec<SummaryRow> = paths
        .iter()
        .zip(&reports)
        .map(|(p, r)| SummaryRow {
            report: p.display().to_string(),
            controller: r.controller,
            replicates: r.n_replicates,
            aborted: r.n_aborted,
            episode_length: r.episode_length,
            failure_rate: r.failure_rate,
            tracking_r2_median: r.tracking_r2_median,
            tracking_r2_mean: r.tracking_r2_mean,
            margins: r.margins.iter().map(|m| (m.face.clone(), m.mean_margin)).collect(),
            fallback_steps: r.fallback_steps,
        })
        .collect();
    println!(
        "{:<10} {:>10} {:>8} {:>13} {:>10} {:>10} {:>12} {:>12}",
        "controller", "replicates", "steps", "failure rate", "r2 median", "r2 mean", "margin x1_lb", "margin x1_ub"
    );
    for (row, r) in rows.iter().zip(&reports) {
        println!(
            "{:<10} {:>10} {:>8} {:>12.2}% {:>10} {:>10} {:>12} {:>12}",
            row.controller.name(),
            row.replicates - row.aborted,
            row.episode_length,
            100.0 * row.failure_rate,
            fmt_opt(row.tracking_r2_median),
            fmt_opt(row.tracking_r2_mean),
            fmt_opt(r.margin("x1_lb")),
            fmt_opt(r.margin("x1_ub")),
        );
    }
    if let Some(out) = out {
        std::fs::write(out, serde_json::to_string_pretty(&rows)?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    match cli.command {
        Command::GenData { out, noiseless } => gen_data(config, &out, noiseless),
        Command::Train { data, out, epochs } => train(config, &data, &out, epochs),
        Command::Run {
            model,
            out,
            controller,
            replicate,
            plans,
        } => run(config, model.as_deref(), &out, controller, replicate, plans),
        Command::Campaign {
            model,
            out,
            controller,
            replicates,
            workers,
        } => campaign(config, model.as_deref(), &out, controller, replicates, workers),
        Command::Compare { reports, out } => compare(&reports, out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<qmpc::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
