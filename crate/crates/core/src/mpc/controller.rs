use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ForecasterModel;
use super::objective::apply_ancillary;
use super::problem::{MpcProblem, PenaltyLoopConfig, SolveResult};
use super::solver::augmented_lagrangian_solve;
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, TimeSeriesWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Nominal,
    Robust,
    Tube,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Nominal, ControllerKind::Robust, ControllerKind::Tube];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Nominal => "nominal",
            ControllerKind::Robust => "robust",
            ControllerKind::Tube => "tube",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(Self::Nominal),
            "robust" => Ok(Self::Robust),
            "tube" => Ok(Self::Tube),
            other => Err(Error::Config(format!(
                "unknown controller `{other}` (nominal, robust, tube)"
            ))),
        }
    }
}

/// Predicted bands of the accepted plan at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDump {
    pub step: usize,
    pub v: Vec<f64>,
    /// `N x D`, row-major.
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Outcome of one control step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub v0: f64,
    pub u_applied: f64,
    /// An optimization ran this step (false during startup).
    pub solved: bool,
    pub feasible: bool,
    pub fallback_used: bool,
    pub wall_time_ms: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub evaluations: usize,
    pub loss: f64,
    pub plan: Option<PlanDump>,
}

impl StepRecord {
    pub(crate) fn startup(u: f64) -> Self {
        Self {
            v0: u,
            u_applied: u,
            solved: false,
            feasible: true,
            fallback_used: false,
            wall_time_ms: 0.0,
            outer_iters: 0,
            inner_iters: 0,
            evaluations: 0,
            loss: 0.0,
            plan: None,
        }
    }
}

/// A closed-loop feedback policy.
pub trait Controller {
    fn kind(&self) -> ControllerKind;
    /// `x` is the measured state at step `k`; `reference` covers steps
    /// `k+1..=k+N` as `N x tracked`.
    fn step(&mut self, k: usize, x: &[f64], reference: &[f64]) -> Result<StepRecord>;
}

pub(crate) fn plan_dump(step: usize, result: &SolveResult) -> PlanDump {
    let f = &result.forecast;
    let collect = |g: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        (0..f.horizon)
            .flat_map(|t| (0..f.n_targets).map(move |d| (t, d)))
            .map(|(t, d)| g(t, d))
            .collect()
    };
    PlanDump {
        step,
        v: result.v_opt.clone(),
        median: collect(&|t, d| f.median(t, d)),
        lower: collect(&|t, d| f.lower(t, d)),
        upper: collect(&|t, d| f.upper(t, d)),
    }
}

/// Warm start: previous plan shifted by one with the last entry repeated.
pub fn shift_plan(plan: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = plan.iter().skip(1).copied().collect();
    out.push(*plan.last().unwrap_or(&0.0));
    out
}

/// Receding-horizon controller around the learned forecaster.
pub struct ForecastController<'a> {
    model: &'a Forecaster,
    problem: MpcProblem,
    penalty: PenaltyLoopConfig,
    startup_input: f64,
    states: VecDeque<Vec<f64>>,
    inputs: VecDeque<f64>,
    plan: Option<Vec<f64>>,
    /// One-step-ahead median of the last accepted solve.
    predicted: Option<Vec<f64>>,
    record_plans: bool,
    /// Last solve, kept for inspection.
    pub last_solve: Option<SolveResult>,
}

impl<'a> ForecastController<'a> {
    pub fn new(
        model: &'a Forecaster,
        problem: MpcProblem,
        penalty: PenaltyLoopConfig,
        startup_input: f64,
    ) -> Result<Self> {
        problem.validate()?;
        penalty.validate()?;
        let c = model.config();
        if c.n_covariates != 1 {
            return Err(Error::Config(
                "closed-loop control supports models whose only covariate is the input".into(),
            ));
        }
        if c.horizon != problem.horizon || c.n_targets != problem.n_states() {
            return Err(Error::Config(format!(
                "model horizon {} / states {} do not match the problem ({} / {})",
                c.horizon,
                c.n_targets,
                problem.horizon,
                problem.n_states()
            )));
        }
        Ok(Self {
            model,
            problem,
            penalty,
            startup_input,
            states: VecDeque::new(),
            inputs: VecDeque::new(),
            plan: None,
            predicted: None,
            record_plans: false,
            last_solve: None,
        })
    }

    pub fn record_plans(mut self, on: bool) -> Self {
        self.record_plans = on;
        self
    }

    pub fn problem(&self) -> &MpcProblem {
        &self.problem
    }

    fn window(&self) -> TimeSeriesWindow {
        let c = self.model.config();
        TimeSeriesWindow {
            past_targets: self.states.iter().flatten().copied().collect(),
            past_covariates: self.inputs.iter().copied().collect(),
            future_covariates: vec![0.0; c.horizon],
            future_targets: None,
        }
    }

    fn push_input(&mut self, u: f64) {
        self.inputs.push_back(u);
        while self.inputs.len() > self.model.config().window {
            self.inputs.pop_front();
        }
    }
}

impl Controller for ForecastController<'_> {
    fn kind(&self) -> ControllerKind {
        if self.problem.robust {
            ControllerKind::Robust
        } else {
            ControllerKind::Nominal
        }
    }

    fn step(&mut self, k: usize, x: &[f64], reference: &[f64]) -> Result<StepRecord> {
        let w = self.model.config().window;
        self.states.push_back(x.to_vec());
        while self.states.len() > w {
            self.states.pop_front();
        }
        if self.inputs.len() < w || self.states.len() < w {
            let u = self.problem.input_bounds.clamp(self.startup_input);
            self.push_input(u);
            return Ok(StepRecord::startup(u));
        }

        let n = self.problem.horizon;
        let warm = self.plan.as_deref().map(shift_plan).unwrap_or_else(|| vec![0.0; n]);
        let mut problem = self.problem.clone();
        problem.reference = reference.to_vec();
        problem.previous_input = *self.inputs.back().expect("history is full");
        let horizon_model = ForecasterModel {
            model: self.model,
            window: self.window(),
        };
        let solved = match augmented_lagrangian_solve(&problem, &horizon_model, &self.penalty, &warm) {
            Ok(r) => Some(r),
            Err(e) if e.is_numerical() => None,
            Err(e) => return Err(e),
        };
        let record = match solved {
            Some(result) if result.accepted => {
                let e: Vec<f64> = match &self.predicted {
                    Some(pred) => x.iter().zip(pred).map(|(a, b)| a - b).collect(),
                    None => vec![0.0; x.len()],
                };
                let u = apply_ancillary(result.v_opt[0], &e, &problem.k, problem.input_bounds);
                self.plan = Some(result.v_opt.clone());
                self.predicted = Some((0..problem.n_states()).map(|d| result.forecast.median(0, d)).collect());
                let record = StepRecord {
                    v0: result.v_opt[0],
                    u_applied: u,
                    solved: true,
                    feasible: result.feasible,
                    fallback_used: false,
                    wall_time_ms: result.wall_time_ms,
                    outer_iters: result.outer_iters,
                    inner_iters: result.inner_iters,
                    evaluations: result.evaluations,
                    loss: result.loss,
                    plan: self.record_plans.then(|| plan_dump(k, &result)),
                };
                self.last_solve = Some(SolveResult { u_applied: u, ..result });
                record
            }
            other => {
                let fallback = self.plan.as_deref().map(shift_plan);
                let v0 = fallback.as_ref().map_or(self.startup_input, |p| p[0]);
                let u = problem.input_bounds.clamp(v0);
                self.plan = fallback;
                self.predicted = None;
                let record = StepRecord {
                    v0,
                    u_applied: u,
                    solved: true,
                    feasible: false,
                    fallback_used: true,
                    wall_time_ms: other.as_ref().map_or(0.0, |r| r.wall_time_ms),
                    outer_iters: other.as_ref().map_or(0, |r| r.outer_iters),
                    inner_iters: other.as_ref().map_or(0, |r| r.inner_iters),
                    evaluations: other.as_ref().map_or(0, |r| r.evaluations),
                    loss: other.as_ref().map_or(f64::NAN, |r| r.loss),
                    plan: None,
                };
                self.last_solve = other.map(|r| SolveResult {
                    u_applied: u,
                    fallback_used: true,
                    ..r
                });
                record
            }
        };
        self.push_input(record.u_applied);
        Ok(record)
    }
}

/// Writes `step,wall_time_ms,outer_iters,inner_iters,evaluations,feasible,fallback_used,loss`.
pub fn write_solve_log(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "step",
        "wall_time_ms",
        "outer_iters",
        "inner_iters",
        "evaluations",
        "feasible",
        "fallback_used",
        "loss",
    ])?;
    for (k, r) in records.iter().enumerate().filter(|(_, r)| r.solved) {
        w.serialize((
            k,
            r.wall_time_ms,
            r.outer_iters,
            r.inner_iters,
            r.evaluations,
            r.feasible,
            r.fallback_used,
            r.loss,
        ))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the recorded plans as a JSON array.
pub fn write_plan_dump(path: &Path, records: &[StepRecord]) -> Result<()> {
    let plans: Vec<&PlanDump> = records.iter().filter_map(|r| r.plan.as_ref()).collect();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), &plans)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::ForecasterConfig;

    fn model() -> Forecaster {
        Forecaster::build(ForecasterConfig::default(), 3).unwrap()
    }

    fn controller(model: &Forecaster) -> ForecastController<'_> {
        let mut problem = MpcProblem::benchmark(false);
        problem.state_bounds = vec![super::super::Interval::new(-50.0, 50.0); 2];
        ForecastController::new(model, problem, PenaltyLoopConfig::default(), 0.3).unwrap()
    }

    #[test]
    fn shift_plan_drops_the_head_and_repeats_the_tail() {
        assert_eq!(shift_plan(&[1.0, 2.0, 3.0]), [2.0, 3.0, 3.0]);
        assert_eq!(shift_plan(&[4.0]), [4.0]);
    }

    #[test]
    fn startup_holds_the_constant_input_until_the_window_fills() {
        let m = model();
        let mut c = controller(&m);
        let reference = vec![1.0; 10];
        for k in 0..10 {
            let r = c.step(k, &[0.1, 0.2], &reference).unwrap();
            assert!(!r.solved && !r.fallback_used);
            assert_eq!(r.u_applied, 0.3);
        }
        assert!(c.last_solve.is_none());
        let r = c.step(10, &[0.1, 0.2], &reference).unwrap();
        assert!(r.solved);
        assert!(c.last_solve.is_some());
    }

    #[test]
    fn zero_budget_falls_back_to_the_shifted_plan() {
        let m = model();
        let mut c = controller(&m);
        let reference = vec![1.0; 10];
        for k in 0..11 {
            c.step(k, &[0.1, 0.2], &reference).unwrap();
        }
        let previous = c.last_solve.as_ref().unwrap().v_opt.clone();
        assert!(c.last_solve.as_ref().unwrap().accepted);

        c.penalty.max_outer_iters = 0;
        let r = c.step(11, &[0.1, 0.2], &reference).unwrap();
        assert!(r.fallback_used && !r.feasible);
        assert_eq!(r.v0, previous[1]);
        assert_eq!(r.u_applied, previous[1]);
        // The solve started from the shifted plan and made no progress.
        assert_eq!(c.last_solve.as_ref().unwrap().v_opt, shift_plan(&previous));

        // With no plan at all the startup input is the fallback.
        let mut fresh = controller(&m);
        fresh.penalty.max_outer_iters = 0;
        for k in 0..10 {
            fresh.step(k, &[0.1, 0.2], &reference).unwrap();
        }
        let r = fresh.step(10, &[0.1, 0.2], &reference).unwrap();
        assert!(r.fallback_used);
        assert_eq!(r.u_applied, 0.3);
    }

    #[test]
    fn models_with_extra_covariates_are_rejected() {
        let config = ForecasterConfig {
            n_covariates: 2,
            ..ForecasterConfig::default()
        };
        let m = Forecaster::build(config, 0).unwrap();
        let err = ForecastController::new(&m, MpcProblem::benchmark(true), PenaltyLoopConfig::default(), 0.0);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ControllerKind::ALL {
            assert_eq!(kind.name().parse::<ControllerKind>().unwrap(), kind);
        }
        assert!("mpc".parse::<ControllerKind>().is_err());
    }
}
