use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::QuantileForecast;

/// Closed interval; infinite ends mean "unbounded".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// One horizon problem. `reference` and `previous_input` change every step;
/// everything else is configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcProblem {
    pub horizon: usize,
    /// State indices whose median is tracked.
    pub tracked: Vec<usize>,
    /// Tracking weight over the tracked states, row-major.
    pub q: Vec<Vec<f64>>,
    /// Input weight (single input channel).
    pub r: f64,
    /// Penalize increments `v_i - v_{i-1}` instead of magnitudes.
    pub delta_u: bool,
    pub state_bounds: Vec<Interval>,
    pub input_bounds: Interval,
    /// Constrain every quantile level rather than the median only.
    pub robust: bool,
    /// Ancillary feedback gain over the state.
    pub k: Vec<f64>,
    pub tighten_inputs: bool,
    /// `N x tracked` reference for the predicted steps.
    #[serde(skip)]
    pub reference: Vec<f64>,
    /// Input applied at the previous step (first increment under `delta_u`).
    #[serde(skip)]
    pub previous_input: f64,
}

impl Default for MpcProblem {
    fn default() -> Self {
        Self::benchmark(false)
    }
}

impl MpcProblem {
    /// Two-state benchmark: track `x1`, unit weights, box bounds on both states.
    pub fn benchmark(robust: bool) -> Self {
        Self {
            horizon: 10,
            tracked: vec![0],
            q: vec![vec![1.0]],
            r: 1.0,
            delta_u: false,
            state_bounds: vec![Interval::new(-2.0, 2.5), Interval::new(-3.5, 3.5)],
            input_bounds: Interval::new(-5.0, 5.0),
            robust,
            k: vec![-0.0621, -0.2027],
            tighten_inputs: robust,
            reference: Vec::new(),
            previous_input: 0.0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.state_bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        let t = self.tracked.len();
        if self.tracked.iter().any(|&i| i >= self.n_states()) {
            return bad(format!("tracked states {:?} out of range", self.tracked));
        }
        if self.q.len() != t || self.q.iter().any(|row| row.len() != t) {
            return bad(format!("q must be {t}x{t}"));
        }
        if !symmetric_positive_definite(&self.q) {
            return bad("q must be symmetric positive definite".into());
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad(format!("r = {} must be positive", self.r));
        }
        for (i, b) in self.state_bounds.iter().chain([&self.input_bounds]).enumerate() {
            if !(b.lower < b.upper) {
                return bad(format!("bound {i}: lower {} must be below upper {}", b.lower, b.upper));
            }
        }
        if !(self.input_bounds.lower.is_finite() && self.input_bounds.upper.is_finite()) {
            return bad("input bounds must be finite".into());
        }
        if self.k.len() != self.n_states() {
            return bad(format!(
                "gain has {} entries for {} states",
                self.k.len(),
                self.n_states()
            ));
        }
        Ok(())
    }

    pub(crate) fn check_reference(&self) -> Result<()> {
        let want = self.horizon * self.tracked.len();
        if self.reference.len() != want {
            return Err(Error::Input(format!(
                "reference has {} values, expected {want}",
                self.reference.len()
            )));
        }
        Ok(())
    }
}

/// Cholesky test for a small dense matrix.
fn symmetric_positive_definite(m: &[Vec<f64>]) -> bool {
    let n = m.len();
    for i in 0..n {
        for j in 0..i {
            if (m[i][j] - m[j][i]).abs() > 1e-12 * m[i][j].abs().max(1.0) {
                return false;
            }
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if !(d > 0.0) {
                    return false;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

/// Outer penalty loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyLoopConfig {
    pub mu0: f64,
    pub alpha_mu: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub grad_tol: f64,
    /// In normalized state units.
    pub constraint_tol: f64,
    pub lbfgs_memory: usize,
    /// Drop step-constraints that stay violated throughout an exhausted solve
    /// and re-solve once.
    pub relax_irreducible: bool,
}

impl Default for PenaltyLoopConfig {
    fn default() -> Self {
        Self {
            mu0: 10.0,
            alpha_mu: 10.0,
            max_outer_iters: 8,
            max_inner_iters: 100,
            grad_tol: 1e-5,
            constraint_tol: 1e-3,
            lbfgs_memory: 10,
            relax_irreducible: true,
        }
    }
}

impl PenaltyLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_mu > 1.0) {
            return Err(Error::Config(format!("alpha_mu = {} must exceed 1", self.alpha_mu)));
        }
        if !(self.mu0 > 0.0 && self.grad_tol > 0.0 && self.constraint_tol > 0.0) {
            return Err(Error::Config("mu0 and tolerances must be positive".into()));
        }
        if self.lbfgs_memory == 0 {
            return Err(Error::Config("lbfgs_memory must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub v_opt: Vec<f64>,
    /// First input after the ancillary correction, clamped to the input bounds.
    pub u_applied: f64,
    /// Sorted forecast at `v_opt`.
    pub forecast: QuantileForecast,
    /// Every state-constraint residual within tolerance and no empty input interval.
    pub feasible: bool,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Objective-and-gradient evaluations over all inner solves.
    pub evaluations: usize,
    pub wall_time_ms: f64,
    pub fallback_used: bool,
    /// Tracking-plus-input cost at `v_opt`.
    pub loss: f64,
    /// Largest normalized state-constraint residual at `v_opt`.
    pub max_residual: f64,
    /// Penalty parameter used in each outer iteration.
    pub mu_history: Vec<f64>,
    pub multipliers: Vec<f64>,
    /// Indices of residuals dropped by the relaxation policy.
    pub relaxed: Vec<usize>,
    /// Some tightened input interval was empty.
    pub tightening_infeasible: bool,
    /// The final inner solve met the gradient tolerance.
    pub converged: bool,
    /// Plan usable by a controller: feasible, or feasible over the
    /// constraints kept after relaxation.
    pub accepted: bool,
}
