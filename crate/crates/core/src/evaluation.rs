//! Closed-loop episodes, Monte-Carlo campaigns and their statistics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Error, Result};
use crate::forecaster::Forecaster;
use crate::mpc::{
    constraint_faces, Controller, ControllerKind, ForecastController, Interval, MpcProblem, PenaltyLoopConfig, Side,
    StepRecord,
};
use crate::plant::{LtiPlant, Mat2, Plant, Vec2};
use crate::seed::{self, Stream};
use crate::tube::{compute_tube, TubeController};

/// Piecewise-constant reference cycling through `levels`, `dwell` steps each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Reference {
    pub levels: Vec<f64>,
    pub dwell: usize,
}

impl Default for Reference {
    fn default() -> Self {
        Self {
            levels: vec![6.0, -5.0],
            dwell: 40,
        }
    }
}

impl Reference {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.dwell == 0 {
            return Err(Error::Config(
                "reference needs at least one level and dwell >= 1".into(),
            ));
        }
        if self.levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reference levels must be finite".into()));
        }
        Ok(())
    }

    pub fn value(&self, k: usize) -> f64 {
        self.levels[(k / self.dwell) % self.levels.len()]
    }

    /// Targets for steps `k+1..=k+n`, each repeated for `tracked` states.
    pub fn window(&self, k: usize, n: usize, tracked: usize) -> Vec<f64> {
        (1..=n)
            .flat_map(|i| std::iter::repeat_n(self.value(k + i), tracked))
            .collect()
    }
}

/// One closed-loop step: state measured at `time` and the controller's reply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: usize,
    pub x: Vec<f64>,
    pub reference: f64,
    pub step: StepRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub controller: ControllerKind,
    /// Replicate index; the plant noise stream is derived from it.
    pub replicate: u32,
    pub records: Vec<TraceRecord>,
}

impl ClosedLoopTrace {
    pub fn states(&self, d: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.x[d]).collect()
    }

    pub fn steps(&self) -> Vec<StepRecord> {
        self.records.iter().map(|r| r.step.clone()).collect()
    }

    pub fn any_fallback(&self) -> bool {
        self.records.iter().any(|r| r.step.fallback_used)
    }

    /// Writes `time,x1..xD,reference,v0,u_applied,feasible,fallback_used,wall_time_ms`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.records.first().map_or(0, |r| r.x.len());
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["time".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend(
            [
                "reference",
                "v0",
                "u_applied",
                "feasible",
                "fallback_used",
                "wall_time_ms",
            ]
            .map(String::from),
        );
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.time.to_string()];
            row.extend(r.x.iter().map(|v| v.to_string()));
            let s = &r.step;
            row.extend([
                r.reference.to_string(),
                s.v0.to_string(),
                s.u_applied.to_string(),
                s.feasible.to_string(),
                s.fallback_used.to_string(),
                s.wall_time_ms.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Runs `length` steps from the plant's current state.
pub fn run_episode(
    controller: &mut dyn Controller,
    plant: &mut dyn Plant,
    reference: &Reference,
    horizon: usize,
    tracked: usize,
    length: usize,
    replicate: u32,
) -> Result<ClosedLoopTrace> {
    let mut records = Vec::with_capacity(length);
    for k in 0..length {
        let x = plant.state();
        let step = controller.step(k, &x, &reference.window(k, horizon, tracked))?;
        plant.step(step.u_applied)?;
        records.push(TraceRecord {
            time: k,
            x: x.to_vec(),
            reference: reference.value(k),
            step,
        });
    }
    Ok(ClosedLoopTrace {
        controller: controller.kind(),
        replicate,
        records,
    })
}

/// Per-step fraction of traces outside each bound face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationRates {
    /// Face names such as `x1_ub`, in residual order.
    pub faces: Vec<String>,
    /// `faces x steps`.
    pub per_face: Vec<Vec<f64>>,
    /// Fraction of traces violating any bound, per step.
    pub any: Vec<f64>,
    /// Largest entry of `any`.
    pub max: f64,
    pub argmax: usize,
}

pub fn face_name(d: usize, side: Side) -> String {
    format!("x{}_{}", d + 1, if side == Side::Upper { "ub" } else { "lb" })
}

fn outside(x: f64, b: &Interval, side: Side) -> bool {
    match side {
        Side::Upper => x > b.upper,
        Side::Lower => x < b.lower,
    }
}

pub fn violation_rate(traces: &[ClosedLoopTrace], bounds: &[Interval]) -> Result<ViolationRates> {
    let faces = constraint_faces(bounds);
    let steps = traces.first().map_or(0, |t| t.records.len());
    if traces.iter().any(|t| t.records.len() != steps) {
        return Err(Error::Input("traces have different lengths".into()));
    }
    let n = traces.len().max(1) as f64;
    let mut per_face = vec![vec![0.0; steps]; faces.len()];
    let mut any = vec![0.0; steps];
    for t in traces {
        for (k, r) in t.records.iter().enumerate() {
            let mut hit = false;
            for (f, &(d, side)) in faces.iter().enumerate() {
                if outside(r.x[d], &bounds[d], side) {
                    per_face[f][k] += 1.0;
                    hit = true;
                }
            }
            if hit {
                any[k] += 1.0;
            }
        }
    }
    per_face
        .iter_mut()
        .flatten()
        .chain(any.iter_mut())
        .for_each(|c| *c /= n);
    let (argmax, max) = any
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (k, v)| if v > best.1 { (k, v) } else { best });
    Ok(ViolationRates {
        faces: faces.iter().map(|&(d, s)| face_name(d, s)).collect(),
        per_face,
        any,
        max,
        argmax,
    })
}

/// Coefficient of determination of `actual` against `reference`; `None`
/// when the reference has no variance.
pub fn tracking_r2(actual: &[f64], reference: &[f64]) -> Option<f64> {
    if actual.len() != reference.len() || reference.is_empty() {
        return None;
    }
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let ss_tot: f64 = reference.iter().map(|r| (r - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = actual.iter().zip(reference).map(|(a, r)| (a - r).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingHistogram {
    /// `bins + 1` edges in milliseconds.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub n: usize,
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// Fixed-width histogram of solve times over every solved step.
pub fn timing_histogram(traces: &[ClosedLoopTrace], bins: usize) -> TimingHistogram {
    let times: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.records.iter().filter(|r| r.step.solved).map(|r| r.step.wall_time_ms))
        .collect();
    if times.is_empty() {
        return TimingHistogram {
            edges: Vec::new(),
            counts: Vec::new(),
            n: 0,
            mean_ms: 0.0,
            max_ms: 0.0,
        };
    }
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    let bins = if hi > lo { bins.max(1) } else { 1 };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for t in &times {
        let i = if width > 0.0 { ((t - lo) / width) as usize } else { 0 };
        counts[i.min(bins - 1)] += 1;
    }
    TimingHistogram {
        edges: (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect(),
        counts,
        n: times.len(),
        mean_ms,
        max_ms: hi,
    }
}

/// Per-step median and 0.05 / 0.95 quantiles across traces, per state
/// (median-unbiased sample quantiles).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    /// `states x steps`.
    pub median: Vec<Vec<f64>>,
    pub q05: Vec<Vec<f64>>,
    pub q95: Vec<Vec<f64>>,
}

pub fn quantile_bands(traces: &[ClosedLoopTrace]) -> Bands {
    let steps = traces.first().map_or(0, |t| t.records.len());
    let d = traces.first().and_then(|t| t.records.first()).map_or(0, |r| r.x.len());
    let mut bands = Bands {
        median: vec![vec![0.0; steps]; d],
        q05: vec![vec![0.0; steps]; d],
        q95: vec![vec![0.0; steps]; d],
    };
    for j in 0..d {
        for k in 0..steps {
            let mut data = Data::new(traces.iter().map(|t| t.records[k].x[j]).collect::<Vec<_>>());
            bands.median[j][k] = data.median();
            bands.q05[j][k] = data.quantile(0.05);
            bands.q95[j][k] = data.quantile(0.95);
        }
    }
    bands
}

/// Signed distance of the median trajectory to each tracked bound face
/// (positive inside), averaged over the steps where the reference has been
/// beyond that face for at least `settle` consecutive steps. `None` when the
/// reference never pushes against the face.
pub fn mean_margins(
    bands: &Bands,
    reference: &[f64],
    bounds: &[Interval],
    tracked: &[usize],
    settle: usize,
) -> Vec<(String, Option<f64>)> {
    let mut out = Vec::new();
    for (d, side) in constraint_faces(bounds) {
        if !tracked.contains(&d) {
            continue;
        }
        let beyond = |k: usize| outside(reference[k], &bounds[d], side);
        let mut run = 0;
        let mut total = 0.0;
        let mut count = 0;
        for (k, &m) in bands.median[d].iter().enumerate() {
            run = if beyond(k) { run + 1 } else { 0 };
            if run > settle {
                total += match side {
                    Side::Upper => bounds[d].upper - m,
                    Side::Lower => m - bounds[d].lower,
                };
                count += 1;
            }
        }
        out.push((face_name(d, side), (count > 0).then(|| total / count as f64)));
    }
    out
}

/// Two-state LTI plant used by a campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSpec {
    pub a: Mat2,
    pub b: Vec2,
    pub sigma: f64,
    pub x0: Vec2,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            a: crate::plant::BENCHMARK_A,
            b: crate::plant::BENCHMARK_B,
            sigma: crate::plant::BENCHMARK_SIGMA,
            x0: [0.0, 0.0],
        }
    }
}

/// Everything needed to build one controller and run episodes with it.
#[derive(Clone, Debug)]
pub struct CampaignSetup<'a> {
    pub kind: ControllerKind,
    /// Required for the nominal and robust controllers.
    pub model: Option<&'a Forecaster>,
    pub plant: PlantSpec,
    /// Shared configuration; `robust` and `tighten_inputs` follow `kind`.
    pub problem: MpcProblem,
    pub penalty: PenaltyLoopConfig,
    pub tube_alpha: f64,
    pub startup_input: f64,
    /// Constant-input steps before the first solve; for the forecasting
    /// controllers this is the model window.
    pub startup_steps: usize,
    pub reference: Reference,
    pub episode_length: usize,
    pub master_seed: u64,
    /// Settling steps excluded from margin averages.
    pub margin_settle: usize,
}

impl CampaignSetup<'_> {
    pub fn controller(&self) -> Result<Box<dyn Controller + '_>> {
        self.controller_recording(false)
    }

    /// As [`Self::controller`]; with `plans`, the forecasting controllers keep
    /// every accepted plan in their step records.
    pub fn controller_recording(&self, plans: bool) -> Result<Box<dyn Controller + '_>> {
        let mut problem = self.problem.clone();
        match self.kind {
            ControllerKind::Nominal | ControllerKind::Robust => {
                let robust = self.kind == ControllerKind::Robust;
                problem.robust = robust;
                problem.tighten_inputs = robust;
                let model = self.model.ok_or_else(|| {
                    Error::Config(format!("the {} controller needs a trained model", self.kind.name()))
                })?;
                let controller = ForecastController::new(model, problem, self.penalty.clone(), self.startup_input)?;
                Ok(Box::new(controller.record_plans(plans)))
            }
            ControllerKind::Tube => {
                let k = match problem.k.as_slice() {
                    [a, b] => [*a, *b],
                    _ => return Err(Error::Config("the tube baseline needs a two-entry gain".into())),
                };
                let spec = compute_tube(&self.plant.a, &self.plant.b, &k, self.plant.sigma, self.tube_alpha)?;
                Ok(Box::new(TubeController::new(
                    self.plant.a,
                    self.plant.b,
                    spec,
                    problem,
                    self.penalty.clone(),
                    self.startup_input,
                    self.startup_steps,
                )?))
            }
        }
    }

    /// Episode for replicate `r`; the plant noise depends only on the master
    /// seed and `r`, so controllers see common random numbers.
    pub fn episode(&self, r: u32) -> Result<ClosedLoopTrace> {
        self.episode_recording(r, false)
    }

    pub fn episode_recording(&self, r: u32, plans: bool) -> Result<ClosedLoopTrace> {
        let mut controller = self.controller_recording(plans)?;
        let rng = seed::rng(self.master_seed, Stream::Plant, r);
        let mut plant = LtiPlant::new(self.plant.a, self.plant.b, self.plant.sigma, rng)?;
        plant.reset(self.plant.x0);
        run_episode(
            controller.as_mut(),
            &mut plant,
            &self.reference,
            self.problem.horizon,
            self.problem.tracked.len(),
            self.episode_length,
            r,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceMargin {
    pub face: String,
    pub mean_margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub controller: ControllerKind,
    pub master_seed: u64,
    pub n_replicates: usize,
    /// Episodes that ended in an error; excluded from every aggregate.
    pub n_aborted: usize,
    pub aborted: Vec<u32>,
    pub episode_length: usize,
    pub reference: Vec<f64>,
    pub violations: ViolationRates,
    /// Largest per-step fraction of replicates violating any bound.
    pub failure_rate: f64,
    pub bands: Bands,
    pub margins: Vec<FaceMargin>,
    /// `r^2` of the across-replicate median of each tracked state.
    pub tracking_r2_median: Option<f64>,
    /// Mean of per-replicate `r^2` over the tracked states.
    pub tracking_r2_mean: Option<f64>,
    pub episodes_with_fallback: usize,
    pub fallback_steps: usize,
    pub infeasible_steps: usize,
    /// Wall-clock data varies between runs and is kept out of the JSON.
    #[serde(skip)]
    pub timing: Option<TimingHistogram>,
}

/// Steps from which `r^2` is computed: after the startup phase.
fn scored<T: Copy>(values: &[T], from: usize) -> Vec<T> {
    values.iter().skip(from).copied().collect()
}

pub fn summarize(
    setup: &CampaignSetup,
    traces: &[ClosedLoopTrace],
    aborted: Vec<u32>,
    n_replicates: usize,
) -> Result<CampaignReport> {
    let bounds = &setup.problem.state_bounds;
    let reference: Vec<f64> = (0..setup.episode_length).map(|k| setup.reference.value(k)).collect();
    let violations = if traces.is_empty() {
        ViolationRates {
            faces: constraint_faces(bounds).iter().map(|&(d, s)| face_name(d, s)).collect(),
            per_face: Vec::new(),
            any: Vec::new(),
            max: 0.0,
            argmax: 0,
        }
    } else {
        violation_rate(traces, bounds)?
    };
    let bands = quantile_bands(traces);
    let tracked = &setup.problem.tracked;
    let margins = if traces.is_empty() {
        Vec::new()
    } else {
        mean_margins(&bands, &reference, bounds, tracked, setup.margin_settle)
    }
    .into_iter()
    .map(|(face, mean_margin)| FaceMargin { face, mean_margin })
    .collect();
    let from = setup.startup_steps;
    let ref_scored = scored(&reference, from);
    let median_r2: Option<Vec<f64>> = tracked
        .iter()
        .map(|&d| {
            bands
                .median
                .get(d)
                .and_then(|m| tracking_r2(&scored(m, from), &ref_scored))
        })
        .collect();
    let per_trace: Option<Vec<f64>> = traces
        .iter()
        .flat_map(|t| tracked.iter().map(move |&d| (t, d)))
        .map(|(t, d)| tracking_r2(&scored(&t.states(d), from), &ref_scored))
        .collect();
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let steps = traces.iter().flat_map(|t| &t.records);
    Ok(CampaignReport {
        controller: setup.kind,
        master_seed: setup.master_seed,
        n_replicates,
        n_aborted: aborted.len(),
        aborted,
        episode_length: setup.episode_length,
        reference,
        failure_rate: violations.max,
        violations,
        bands,
        margins,
        tracking_r2_median: median_r2.and_then(mean),
        tracking_r2_mean: per_trace.and_then(mean),
        episodes_with_fallback: traces.iter().filter(|t| t.any_fallback()).count(),
        fallback_steps: steps.clone().filter(|r| r.step.fallback_used).count(),
        infeasible_steps: steps.filter(|r| r.step.solved && !r.step.feasible).count(),
        timing: Some(timing_histogram(traces, 20)),
    })
}

/// Runs `n_replicates` episodes on up to `workers` threads and aggregates
/// them. Results are collected in replicate order, so the report does not
/// depend on the worker count. Threads are capped at the available cores so
/// that recorded solve times are not inflated by time-slicing.
pub fn run_campaign(
    setup: &CampaignSetup,
    n_replicates: usize,
    workers: usize,
) -> Result<(CampaignReport, Vec<ClosedLoopTrace>)> {
    setup.reference.validate()?;
    if setup.episode_length == 0 {
        return Err(Error::Config("episode length must be >= 1".into()));
    }
    let n = u32::try_from(n_replicates).map_err(|_| Error::Config("too many replicates".into()))?;
    // Fail fast on configuration errors rather than aborting every episode.
    setup.controller()?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.clamp(1, cores))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<ClosedLoopTrace>> =
        pool.install(|| (0..n).into_par_iter().map(|r| setup.episode(r)).collect());
    let mut traces = Vec::with_capacity(outcomes.len());
    let mut aborted = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(t) => traces.push(t),
            Err(e) if e.is_numerical() => aborted.push(r as u32),
            Err(e) => return Err(e),
        }
    }
    let report = summarize(setup, &traces, aborted, n_replicates)?;
    Ok((report, traces))
}

impl CampaignReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// Per-step aggregates: violation rates per face and overall, then the
    /// median and 0.05 / 0.95 bands per state, then the reference.
    pub fn write_aggregates_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.bands.median.len();
        let mut header = vec!["step".to_string()];
        header.extend(self.violations.faces.iter().map(|f| format!("rate_{f}")));
        header.push("rate_any".into());
        for j in 1..=d {
            header.extend([format!("med_x{j}"), format!("q05_x{j}"), format!("q95_x{j}")]);
        }
        header.push("reference".into());
        w.write_record(&header)?;
        for k in 0..self.violations.any.len() {
            let mut row = vec![k.to_string()];
            row.extend(self.violations.per_face.iter().map(|f| f[k].to_string()));
            row.push(self.violations.any[k].to_string());
            for j in 0..d {
                row.extend(
                    [self.bands.median[j][k], self.bands.q05[j][k], self.bands.q95[j][k]].map(|v| v.to_string()),
                );
            }
            row.push(self.reference[k].to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn margin(&self, face: &str) -> Option<f64> {
        self.margins.iter().find(|m| m.face == face).and_then(|m| m.mean_margin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(xs: &[[f64; 2]]) -> ClosedLoopTrace {
        ClosedLoopTrace {
            controller: ControllerKind::Nominal,
            replicate: 0,
            records: xs
                .iter()
                .enumerate()
                .map(|(k, x)| TraceRecord {
                    time: k,
                    x: x.to_vec(),
                    reference: 0.0,
                    step: StepRecord {
                        solved: true,
                        wall_time_ms: 1.0,
                        ..StepRecord::startup(0.0)
                    },
                })
                .collect(),
        }
    }

    fn bounds() -> Vec<Interval> {
        MpcProblem::benchmark(false).state_bounds
    }

    #[test]
    fn reference_cycles_levels() {
        let r = Reference {
            levels: vec![1.0, -1.0],
            dwell: 2,
        };
        assert_eq!(
            (0..6).map(|k| r.value(k)).collect::<Vec<_>>(),
            [1.0, 1.0, -1.0, -1.0, 1.0, 1.0]
        );
        assert_eq!(r.window(0, 3, 1), [1.0, -1.0, -1.0]);
        assert_eq!(r.window(1, 1, 2), [-1.0, -1.0]);
    }

    #[test]
    fn all_inside_gives_zero_rate() {
        let t = vec![trace(&[[0.0, 0.0], [1.0, -1.0]]); 3];
        let v = violation_rate(&t, &bounds()).unwrap();
        assert_eq!(v.max, 0.0);
        assert!(v.per_face.iter().flatten().all(|r| *r == 0.0));
    }

    #[test]
    fn half_outside_gives_half() {
        let t = vec![
            trace(&[[0.0, 0.0], [3.0, 0.0]]),
            trace(&[[0.0, 0.0], [0.0, 0.0]]),
            trace(&[[0.0, 0.0], [0.0, -4.0]]),
            trace(&[[0.0, 0.0], [0.0, 0.0]]),
        ];
        let v = violation_rate(&t, &bounds()).unwrap();
        assert_eq!(v.any, [0.0, 0.5]);
        assert_eq!(v.faces, ["x1_ub", "x1_lb", "x2_ub", "x2_lb"]);
        assert_eq!(v.per_face[0], [0.0, 0.25]);
        assert_eq!(v.per_face[3], [0.0, 0.25]);
        assert_eq!((v.max, v.argmax), (0.5, 1));
    }

    #[test]
    fn unequal_lengths_are_rejected() {
        let t = vec![trace(&[[0.0, 0.0]]), trace(&[[0.0, 0.0], [0.0, 0.0]])];
        assert!(violation_rate(&t, &bounds()).is_err());
    }

    #[test]
    fn rates_match_double_loop_recount() {
        let mut rng = seed::rng(60, Stream::Data, 0);
        let b = bounds();
        let traces: Vec<ClosedLoopTrace> = (0..10)
            .map(|_| {
                use rand::Rng as _;
                let xs: Vec<[f64; 2]> = (0..25)
                    .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-4.0..4.0)])
                    .collect();
                trace(&xs)
            })
            .collect();
        let v = violation_rate(&traces, &b).unwrap();
        for k in 0..25 {
            let mut count = 0;
            for t in &traces {
                let x = &t.records[k].x;
                let mut bad = false;
                for d in 0..2 {
                    if x[d] > b[d].upper || x[d] < b[d].lower {
                        bad = true;
                    }
                }
                if bad {
                    count += 1;
                }
            }
            assert_eq!(v.any[k], count as f64 / 10.0);
        }
        assert!(v.any.iter().all(|r| *r <= v.max));
    }

    #[test]
    fn r2_examples() {
        let r = [1.0, 2.0, 3.0];
        assert_eq!(tracking_r2(&r, &r), Some(1.0));
        assert_eq!(tracking_r2(&[2.0, 2.0, 2.0], &r), Some(0.0));
        // SS_res = 0.25 + 0 + 0.25, SS_tot = 2.
        assert_eq!(tracking_r2(&[1.5, 2.0, 2.5], &r), Some(0.75));
        assert_eq!(tracking_r2(&[1.0, 1.0], &[3.0, 3.0]), None);
    }

    #[test]
    fn constant_times_give_single_bin() {
        let h = timing_histogram(&[trace(&[[0.0, 0.0]; 5])], 10);
        assert_eq!(h.counts, [5]);
        assert_eq!((h.mean_ms, h.max_ms), (1.0, 1.0));
    }

    #[test]
    fn histogram_mean_and_counts() {
        let mut t = trace(&[[0.0, 0.0]; 4]);
        for (r, ms) in t.records.iter_mut().zip([1.0, 2.0, 3.0, 10.0]) {
            r.step.wall_time_ms = ms;
        }
        let h = timing_histogram(&[t], 3);
        assert_eq!(h.mean_ms, 4.0);
        assert_eq!(h.counts, [3, 0, 1]);
        assert_eq!(h.edges, [1.0, 4.0, 7.0, 10.0]);
    }

    #[test]
    fn bands_follow_order_statistics() {
        let traces: Vec<ClosedLoopTrace> = (0..101).map(|i| trace(&[[i as f64, -(i as f64)]])).collect();
        let b = quantile_bands(&traces);
        assert_eq!(b.median[0][0], 50.0);
        // Median-unbiased definition: position h = (n + 1/3) p + 1/3 (1-based).
        assert!((b.q05[0][0] - 4.4).abs() < 1e-9 && (b.q95[0][0] - 95.6).abs() < 1e-9);
        assert_eq!(b.median[1][0], -50.0);
    }

    #[test]
    fn margins_average_settled_steps() {
        let bands = Bands {
            median: vec![vec![0.0, -1.0, -1.8, -1.9, -1.9], vec![0.0; 5]],
            q05: Vec::new(),
            q95: Vec::new(),
        };
        let reference = [0.0, -5.0, -5.0, -5.0, -5.0];
        let m = mean_margins(&bands, &reference, &bounds(), &[0], 1);
        assert_eq!(m[0], ("x1_ub".to_string(), None));
        let (name, value) = &m[1];
        assert_eq!(name, "x1_lb");
        assert!((value.unwrap() - (0.2 + 0.1 + 0.1) / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rates_lie_in_unit_interval(xs in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 12)) {
            let traces: Vec<ClosedLoopTrace> = xs.chunks(3).map(|c| trace(&c.iter().map(|(a, b)| [*a, *b]).collect::<Vec<_>>())).collect();
            let v = violation_rate(&traces, &bounds()).unwrap();
            prop_assert!(v.any.iter().chain(v.per_face.iter().flatten()).all(|r| (0.0..=1.0).contains(r)));
            prop_assert!(v.any.iter().all(|r| *r <= v.max));
        }
    }
}
