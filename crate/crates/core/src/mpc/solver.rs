use std::time::Instant;

use super::lbfgs::{lbfgs_minimize, LbfgsOptions};
use super::model::HorizonModel;
use super::objective::{constraint_faces, mpc_loss, quantile_constraints, tighten_input_bounds, Side, TightenedInput};
use super::problem::{MpcProblem, PenaltyLoopConfig, SolveResult};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::forecaster::QuantileForecast;

/// Penalized objective `J + mu/2 sum relu(c)^2 + sum lambda relu(c)` on a tape.
///
/// Residuals form an `[N, L*S]` matrix: row = predicted step, column =
/// `level * S + face`, where `S` is the number of finite bound faces and `L`
/// the number of constrained levels (all levels when robust, else the median).
pub(crate) struct Penalized<'a> {
    problem: &'a MpcProblem,
    model: &'a dyn HorizonModel,
    faces: Vec<(usize, Side)>,
    scale: Vec<f64>,
    levels: Vec<usize>,
    reference: Tensor,
    q: Tensor,
    difference: Option<(Tensor, Tensor)>,
}

impl<'a> Penalized<'a> {
    pub(crate) fn new(problem: &'a MpcProblem, model: &'a dyn HorizonModel) -> Result<Self> {
        problem.validate()?;
        problem.check_reference()?;
        let n = problem.horizon;
        if model.horizon() != n || model.n_targets() != problem.n_states() {
            return Err(Error::Input(format!(
                "model predicts {} steps of {} states, problem needs {n} of {}",
                model.horizon(),
                model.n_targets(),
                problem.n_states()
            )));
        }
        let t = problem.tracked.len();
        let levels = if problem.robust {
            (0..model.levels().len()).collect()
        } else {
            vec![model.median_index()]
        };
        let difference = problem.delta_u.then(|| {
            let mut d = vec![0.0; n * n];
            for i in 0..n {
                d[i * n + i] = 1.0;
                if i > 0 {
                    d[i * n + i - 1] = -1.0;
                }
            }
            let mut prev = vec![0.0; n];
            prev[0] = problem.previous_input;
            (Tensor::from_parts(vec![n, n], d), Tensor::from_parts(vec![n, 1], prev))
        });
        Ok(Self {
            problem,
            model,
            faces: constraint_faces(&problem.state_bounds),
            scale: model.constraint_scale(),
            levels,
            reference: Tensor::new(vec![n, t], problem.reference.clone())?,
            q: Tensor::new(vec![t, t], problem.q.iter().flatten().copied().collect())?,
            difference,
        })
    }

    pub(crate) fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub(crate) fn n_columns(&self) -> usize {
        self.faces.len() * self.levels.len()
    }

    fn cost(&self, tape: &Tape, v: &Tensor, median: &Tensor) -> Result<Tensor> {
        let p = self.problem;
        let tracked: Vec<Tensor> = p
            .tracked
            .iter()
            .map(|&s| tape.slice_cols(median, s, s + 1))
            .collect::<Result<_>>()?;
        let e = tape.sub(&tape.concat_cols(&tracked)?, &self.reference)?;
        let tracking = tape.sum(&tape.mul(&tape.matmul(&e, &self.q)?, &e)?)?;
        let input = match &self.difference {
            Some((d, prev)) => tape.sub(&tape.matmul(d, v)?, prev)?,
            None => v.clone(),
        };
        tape.add(&tracking, &tape.scale(&tape.sum(&tape.square(&input)?)?, p.r)?)
    }

    fn residuals(&self, tape: &Tape, predictions: &[Tensor]) -> Result<Tensor> {
        let bounds = &self.problem.state_bounds;
        let mut columns = Vec::with_capacity(self.n_columns());
        for &j in &self.levels {
            for &(d, side) in &self.faces {
                let col = tape.slice_cols(&predictions[j], d, d + 1)?;
                let s = self.scale[d];
                columns.push(match side {
                    Side::Upper => tape.scale_shift(&col, &[1.0 / s], &[-bounds[d].upper / s])?,
                    Side::Lower => tape.scale_shift(&col, &[-1.0 / s], &[bounds[d].lower / s])?,
                });
            }
        }
        tape.concat_cols(&columns)
    }

    /// Value and gradient of the penalized objective.
    pub(crate) fn evaluate(&self, v: &[f64], mu: f64, lambda: &Tensor, mask: &Tensor) -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let vt = tape.var(vec![v.len(), 1], v.to_vec())?;
        let predictions = self.model.predict(&tape, &vt)?;
        let mut phi = self.cost(&tape, &vt, &predictions[self.model.median_index()])?;
        if !self.faces.is_empty() {
            let c = self.residuals(&tape, &predictions)?;
            let violation = tape.mul(&tape.relu(&c)?, mask)?;
            let quadratic = tape.scale(&tape.sum(&tape.square(&violation)?)?, 0.5 * mu)?;
            let linear = tape.sum(&tape.mul(&violation, lambda)?)?;
            phi = tape.add(&phi, &tape.add(&quadratic, &linear)?)?;
        }
        let value = phi.item();
        let mut grads = tape.backward(&phi)?;
        Ok((value, grads.take(&vt)?))
    }

    /// Residual matrix `[N, L*S]` in normalized units, without a tape.
    pub(crate) fn residual_values(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.faces.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::no_grad();
        let vt = Tensor::new(vec![v.len(), 1], v.to_vec())?;
        let predictions = self.model.predict(&tape, &vt)?;
        Ok(self.residuals(&tape, &predictions)?.to_vec())
    }

    /// Per step-constraint residual (`N x S`, normalized) from the sorted forecast.
    fn step_residuals(&self, forecast: &QuantileForecast) -> Vec<f64> {
        let raw = quantile_constraints(forecast, &self.problem.state_bounds, self.problem.robust);
        let s = self.faces.len();
        raw.iter()
            .enumerate()
            .map(|(i, c)| c / self.scale[self.faces[i % s].0])
            .collect()
    }
}

/// Value and gradient of the penalized objective at `v` with every
/// constraint active. `lambda` is the `[N, L*S]` multiplier matrix in
/// row-major order (see [`penalized_shape`]).
pub fn penalized_objective(
    problem: &MpcProblem,
    model: &dyn HorizonModel,
    v: &[f64],
    mu: f64,
    lambda: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let objective = Penalized::new(problem, model)?;
    let (n, cols) = (problem.horizon, objective.n_columns());
    if v.len() != n {
        return Err(Error::Input(format!("{} inputs for horizon {n}", v.len())));
    }
    let lambda = Tensor::new(vec![n, cols], lambda.to_vec())?;
    let mask = Tensor::new(vec![n, cols], vec![1.0; n * cols])?;
    objective.evaluate(v, mu, &lambda, &mask)
}

/// `(rows, columns)` of the multiplier matrix for `problem` and `model`.
pub fn penalized_shape(problem: &MpcProblem, model: &dyn HorizonModel) -> Result<(usize, usize)> {
    let objective = Penalized::new(problem, model)?;
    Ok((problem.horizon, objective.n_columns()))
}

/// Box for `v`: `v_0` uses the band of the first predicted step, `v_i` the
/// band of predicted step `i - 1`.
fn input_box(problem: &MpcProblem, tightened: Option<&[TightenedInput]>) -> Vec<(f64, f64)> {
    let n = problem.horizon;
    match tightened {
        Some(t) => (0..n)
            .map(|i| {
                let b = t[i.saturating_sub(1)].bounds;
                (b.lower, b.upper)
            })
            .collect(),
        None => vec![(problem.input_bounds.lower, problem.input_bounds.upper); n],
    }
}

struct OuterOutcome {
    v: Vec<f64>,
    outer_iters: usize,
    inner_iters: usize,
    evaluations: usize,
    mu_history: Vec<f64>,
    lambda: Vec<f64>,
    converged: bool,
    tightening_infeasible: bool,
    /// Step residuals after every outer iteration.
    history: Vec<Vec<f64>>,
}

fn outer_loop(
    objective: &Penalized,
    penalty: &PenaltyLoopConfig,
    v0: Vec<f64>,
    step_mask: &[bool],
) -> Result<OuterOutcome> {
    let problem = objective.problem;
    let n = problem.horizon;
    let (s, cols) = (objective.n_faces(), objective.n_columns());
    let mask_values: Vec<f64> = (0..n * cols)
        .map(|i| {
            let (t, col) = (i / cols.max(1), i % cols.max(1));
            if step_mask[t * s + col % s.max(1)] {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let mask = Tensor::new(vec![n, cols], mask_values.clone())?;
    let mut lambda = vec![0.0; n * cols];
    let mut mu = penalty.mu0;
    let options = LbfgsOptions {
        memory: penalty.lbfgs_memory,
        grad_tol: penalty.grad_tol,
        max_iters: penalty.max_inner_iters,
    };
    let mut out = OuterOutcome {
        v: v0,
        outer_iters: 0,
        inner_iters: 0,
        evaluations: 0,
        mu_history: Vec::new(),
        lambda: Vec::new(),
        converged: false,
        tightening_infeasible: false,
        history: Vec::new(),
    };
    for _ in 0..penalty.max_outer_iters {
        let tightened = if problem.tighten_inputs {
            let t = tighten_input_bounds(problem.input_bounds, &problem.k, &objective.model.forecast(&out.v)?);
            out.tightening_infeasible = t.iter().any(|t| t.empty);
            Some(t)
        } else {
            None
        };
        let bounds = input_box(problem, tightened.as_deref());
        let lambda_t = Tensor::new(vec![n, cols], lambda.clone())?;
        out.mu_history.push(mu);
        let inner = lbfgs_minimize(
            |x| objective.evaluate(x, mu, &lambda_t, &mask),
            &out.v,
            &bounds,
            &options,
        )?;
        out.v = inner.x;
        out.inner_iters += inner.iterations;
        out.evaluations += inner.evaluations;
        out.outer_iters += 1;
        out.converged = inner.converged;

        let forecast = objective.model.forecast(&out.v)?;
        let steps = objective.step_residuals(&forecast);
        let max_kept = steps
            .iter()
            .zip(step_mask)
            .filter(|(_, keep)| **keep)
            .map(|(c, _)| *c)
            .fold(f64::NEG_INFINITY, f64::max);
        out.history.push(steps);
        if max_kept <= penalty.constraint_tol && inner.converged {
            break;
        }
        let c = objective.residual_values(&out.v)?;
        for ((l, c), m) in lambda.iter_mut().zip(&c).zip(&mask_values) {
            *l += m * c.max(0.0);
        }
        mu *= penalty.alpha_mu;
    }
    out.lambda = lambda;
    Ok(out)
}

/// Step-constraints violated after every outer iteration without material
/// improvement.
fn irreducible(history: &[Vec<f64>], tol: f64) -> Vec<usize> {
    let Some(last) = history.last() else {
        return Vec::new();
    };
    (0..last.len())
        .filter(|&i| history.iter().all(|h| h[i] > tol) && history.windows(2).all(|w| w[1][i] >= w[0][i] - tol))
        .collect()
}

/// Augmented-Lagrangian solve of one horizon problem, warm-started from
/// `warm_start`. Box bounds on `v` are enforced by projection.
pub fn augmented_lagrangian_solve(
    problem: &MpcProblem,
    model: &dyn HorizonModel,
    penalty: &PenaltyLoopConfig,
    warm_start: &[f64],
) -> Result<SolveResult> {
    let start = Instant::now();
    penalty.validate()?;
    let objective = Penalized::new(problem, model)?;
    if warm_start.len() != problem.horizon {
        return Err(Error::Input(format!(
            "warm start has {} entries, horizon is {}",
            warm_start.len(),
            problem.horizon
        )));
    }
    let n_steps = problem.horizon * objective.n_faces();
    let mut step_mask = vec![true; n_steps];
    let v0: Vec<f64> = warm_start.iter().map(|v| problem.input_bounds.clamp(*v)).collect();
    let mut outcome = outer_loop(&objective, penalty, v0, &step_mask)?;

    let tol = penalty.constraint_tol;
    let exhausted = outcome.outer_iters == penalty.max_outer_iters && penalty.max_outer_iters > 0;
    let violated = outcome.history.last().is_some_and(|h| h.iter().any(|c| *c > tol));
    let mut relaxed = Vec::new();
    let (mut outer_iters, mut inner_iters, mut evaluations, mut mu_history) = (0, 0, 0, Vec::new());
    if penalty.relax_irreducible && exhausted && violated {
        relaxed = irreducible(&outcome.history, tol);
        if !relaxed.is_empty() {
            for &i in &relaxed {
                step_mask[i] = false;
            }
            outer_iters = outcome.outer_iters;
            inner_iters = outcome.inner_iters;
            evaluations = outcome.evaluations;
            mu_history = std::mem::take(&mut outcome.mu_history);
            outcome = outer_loop(&objective, penalty, outcome.v, &step_mask)?;
        }
    }
    outer_iters += outcome.outer_iters;
    inner_iters += outcome.inner_iters;
    evaluations += outcome.evaluations;
    mu_history.extend(outcome.mu_history);

    let forecast = model.forecast(&outcome.v)?;
    let steps = objective.step_residuals(&forecast);
    let max_residual = steps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_kept = steps
        .iter()
        .zip(&step_mask)
        .filter(|(_, keep)| **keep)
        .map(|(c, _)| *c)
        .fold(f64::NEG_INFINITY, f64::max);
    let ran = outer_iters > 0;
    let feasible = ran && max_residual <= tol && !outcome.tightening_infeasible;
    let accepted = ran && max_kept <= tol && !outcome.tightening_infeasible;
    let median = forecast.median_trajectory();
    let loss = mpc_loss(&outcome.v, &median, problem);
    Ok(SolveResult {
        u_applied: problem.input_bounds.clamp(outcome.v[0]),
        v_opt: outcome.v,
        forecast,
        feasible,
        outer_iters,
        inner_iters,
        evaluations,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        fallback_used: false,
        loss,
        max_residual: if max_residual.is_finite() { max_residual } else { 0.0 },
        mu_history,
        multipliers: outcome.lambda,
        relaxed,
        tightening_infeasible: outcome.tightening_infeasible,
        converged: outcome.converged,
        accepted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::{Forecaster, ForecasterConfig, TimeSeriesWindow};
    use crate::mpc::model::{ForecasterModel, LinearModel};
    use crate::mpc::problem::Interval;
    use crate::plant::{BENCHMARK_A, BENCHMARK_B};
    use crate::seed::{self, Stream};
    use proptest::prelude::*;
    use rand::Rng as _;

    const FREE: Interval = Interval::new(f64::NEG_INFINITY, f64::INFINITY);

    /// `x1 = v` over one step: minimize `(v - 4)^2 + v^2` subject to `v <= upper`.
    fn scalar_problem(upper: f64) -> (MpcProblem, LinearModel) {
        let mut p = MpcProblem::benchmark(false);
        p.horizon = 1;
        p.state_bounds = vec![Interval::new(-10.0, upper), FREE];
        p.reference = vec![4.0];
        let model = LinearModel::new(&[[0.0; 2]; 2], &[1.0, 0.0], [0.0, 0.0], 1).unwrap();
        (p, model)
    }

    fn tight() -> PenaltyLoopConfig {
        PenaltyLoopConfig {
            alpha_mu: 10.0,
            max_outer_iters: 12,
            grad_tol: 1e-7,
            constraint_tol: 1e-6,
            ..PenaltyLoopConfig::default()
        }
    }

    fn benchmark_linear(x0: [f64; 2], reference: f64, robust: bool) -> (MpcProblem, LinearModel) {
        let mut p = MpcProblem::benchmark(robust);
        p.tighten_inputs = false;
        p.reference = vec![reference; p.horizon];
        let model = LinearModel::new(&BENCHMARK_A, &BENCHMARK_B, x0, p.horizon).unwrap();
        (p, model)
    }

    #[test]
    fn active_constraint_reaches_kkt_point() {
        let (p, model) = scalar_problem(1.0);
        let r = augmented_lagrangian_solve(&p, &model, &tight(), &[0.0]).unwrap();
        assert!((r.v_opt[0] - 1.0).abs() < 1e-4, "v = {}", r.v_opt[0]);
        assert!(r.feasible && r.accepted);
        // Stationarity of the Lagrangian: J'(1) + lambda = 0 with lambda = 4.
        let lambda_star = 4.0;
        let implied = r.multipliers[0] + (r.mu_history.last().unwrap() * r.max_residual.max(0.0));
        assert!(
            (implied - lambda_star).abs() < 0.05 * lambda_star,
            "implied multiplier {implied}"
        );
    }

    #[test]
    fn inactive_constraint_gives_unconstrained_minimum() {
        let (p, model) = scalar_problem(5.0);
        let r = augmented_lagrangian_solve(&p, &model, &tight(), &[0.0]).unwrap();
        assert!((r.v_opt[0] - 2.0).abs() < 1e-8);
        assert_eq!(r.outer_iters, 1);
        assert!(r.multipliers.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn warm_start_at_optimum_terminates_immediately() {
        let (p, model) = benchmark_linear([0.0, 0.0], 1.0, false);
        let cfg = PenaltyLoopConfig::default();
        let first = augmented_lagrangian_solve(&p, &model, &cfg, &vec![0.0; p.horizon]).unwrap();
        assert!(first.feasible && first.max_residual < 0.0);
        let again = augmented_lagrangian_solve(&p, &model, &cfg, &first.v_opt).unwrap();
        assert_eq!(again.outer_iters, 1);
        assert_eq!(again.inner_iters, 0);
        assert_eq!(again.v_opt, first.v_opt);
    }

    #[test]
    fn penalty_grows_and_multipliers_never_decrease() {
        let (p, model) = benchmark_linear([0.0, 0.0], 6.0, true);
        let mut previous: Option<Vec<f64>> = None;
        for outer in 1..=6 {
            let cfg = PenaltyLoopConfig {
                max_outer_iters: outer,
                constraint_tol: 1e-9,
                relax_irreducible: false,
                ..PenaltyLoopConfig::default()
            };
            let r = augmented_lagrangian_solve(&p, &model, &cfg, &vec![0.0; p.horizon]).unwrap();
            assert!(r.mu_history.windows(2).all(|w| w[1] > w[0]));
            assert!(r.multipliers.iter().all(|l| *l >= 0.0));
            if let Some(prev) = &previous {
                assert!(prev.iter().zip(&r.multipliers).all(|(a, b)| b >= a));
            }
            previous = Some(r.multipliers);
        }
        assert!(previous.unwrap().iter().any(|l| *l > 0.0));
    }

    #[test]
    fn penalized_gradient_matches_finite_differences() {
        let mut rng = seed::rng(40, Stream::Data, 0);
        let config = ForecasterConfig::default();
        let model = Forecaster::build(config.clone(), 7).unwrap();
        let (w, n) = (config.window, config.horizon);
        let window = TimeSeriesWindow {
            past_targets: (0..w * 2).map(|_| rng.random_range(-2.0..2.0)).collect(),
            past_covariates: (0..w).map(|_| rng.random_range(-5.0..5.0)).collect(),
            future_covariates: vec![0.0; n],
            future_targets: None,
        };
        let horizon_model = ForecasterModel { model: &model, window };
        let mut p = MpcProblem::benchmark(true);
        p.delta_u = true;
        p.previous_input = 0.3;
        // Bounds near the untrained output so that some residuals are positive.
        p.state_bounds = vec![Interval::new(-0.05, 0.05), Interval::new(-0.05, 0.05)];
        p.reference = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = Penalized::new(&p, &horizon_model).unwrap();
        let cols = objective.n_columns();
        let lambda = Tensor::new(
            vec![n, cols],
            (0..n * cols).map(|_| rng.random_range(0.0..2.0)).collect(),
        )
        .unwrap();
        let mask = Tensor::new(vec![n, cols], vec![1.0; n * cols]).unwrap();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, grad) = objective.evaluate(&v, 3.0, &lambda, &mask).unwrap();
        assert!(objective.residual_values(&v).unwrap().iter().any(|c| *c > 0.0));
        let h = 1e-6;
        for i in 0..n {
            let (mut a, mut b) = (v.clone(), v.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (objective.evaluate(&a, 3.0, &lambda, &mask).unwrap().0
                - objective.evaluate(&b, 3.0, &lambda, &mask).unwrap().0)
                / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-4 * fd.abs().max(1.0),
                "component {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let (p, model) = benchmark_linear([1.0, -0.5], 6.0, true);
        let cfg = PenaltyLoopConfig::default();
        let a = augmented_lagrangian_solve(&p, &model, &cfg, &vec![0.0; p.horizon]).unwrap();
        let b = augmented_lagrangian_solve(&p, &model, &cfg, &vec![0.0; p.horizon]).unwrap();
        assert_eq!(a.v_opt, b.v_opt);
        assert_eq!(a.multipliers, b.multipliers);
    }

    #[test]
    fn zero_budget_is_never_feasible() {
        let (p, model) = scalar_problem(5.0);
        let cfg = PenaltyLoopConfig {
            max_outer_iters: 0,
            ..PenaltyLoopConfig::default()
        };
        let r = augmented_lagrangian_solve(&p, &model, &cfg, &[2.0]).unwrap();
        assert!(!r.feasible && !r.accepted);
        assert_eq!(r.outer_iters, 0);
    }

    #[test]
    fn irreducible_violations_are_relaxed() {
        // x1 is frozen above its bound, x2 = v tracks 1.
        let mut p = MpcProblem::benchmark(false);
        p.horizon = 3;
        p.tracked = vec![1];
        p.reference = vec![1.0; 3];
        let model = LinearModel::new(&[[1.0, 0.0], [0.0, 0.0]], &[0.0, 1.0], [3.0, 0.0], 3).unwrap();
        let r = augmented_lagrangian_solve(&p, &model, &PenaltyLoopConfig::default(), &[0.0; 3]).unwrap();
        let faces = constraint_faces(&p.state_bounds).len();
        assert_eq!(r.relaxed, (0..3).map(|t| t * faces).collect::<Vec<_>>());
        assert!(r.accepted && !r.feasible);
        assert!(r.v_opt.iter().all(|v| (v - 0.5).abs() < 1e-4));
    }

    #[test]
    fn input_bounds_are_respected() {
        let (p, model) = benchmark_linear([0.0, 0.0], 40.0, false);
        let r = augmented_lagrangian_solve(&p, &model, &PenaltyLoopConfig::default(), &vec![0.0; p.horizon]).unwrap();
        assert!(r.v_opt.iter().all(|v| p.input_bounds.contains(*v)));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (mut p, model) = benchmark_linear([0.0, 0.0], 1.0, false);
        let cfg = PenaltyLoopConfig::default();
        assert!(matches!(
            augmented_lagrangian_solve(&p, &model, &cfg, &[0.0; 3]),
            Err(Error::Input(_))
        ));
        p.reference.pop();
        assert!(matches!(
            augmented_lagrangian_solve(&p, &model, &cfg, &vec![0.0; p.horizon]),
            Err(Error::Input(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn feasible_plans_satisfy_every_residual(
            x1 in -2.0..2.5f64,
            x2 in -3.5..3.5f64,
            reference in -6.0..6.0f64,
            robust in any::<bool>(),
        ) {
            let (p, model) = benchmark_linear([x1, x2], reference, robust);
            let cfg = PenaltyLoopConfig::default();
            let r = augmented_lagrangian_solve(&p, &model, &cfg, &vec![0.0; p.horizon]).unwrap();
            if r.feasible {
                let c = quantile_constraints(&r.forecast, &p.state_bounds, p.robust);
                prop_assert!(c.iter().all(|c| *c <= cfg.constraint_tol));
            }
            prop_assert!(r.v_opt.iter().all(|v| p.input_bounds.contains(*v)));
        }
    }
}
