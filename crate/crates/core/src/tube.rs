//! Probabilistic-tube MPC baseline for the linear benchmark.
//!
//! The error `e = x - z` between the plant and a nominal state `z` driven by
//! the nominal input evolves as `e+ = (A + B K) e + B eps` under the feedback
//! `u = v + K e`. Its steady-state covariance gives Gaussian half-widths by
//! which state and input bounds are tightened; the nominal plan is then an
//! MPC over the exact noiseless model.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mpc::{
    augmented_lagrangian_solve, shift_plan, Controller, ControllerKind, Interval, LinearModel, MpcProblem,
    PenaltyLoopConfig, SolveResult, StepRecord,
};
use crate::plant::{mat_vec, spectral_radius, Mat2, Vec2};

const LYAPUNOV_TOL: f64 = 1e-12;
const LYAPUNOV_MAX_ITERS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    pub k: Vec2,
    /// Steady-state error covariance.
    pub sigma_inf: Mat2,
    pub alpha: f64,
    /// `Phi^-1(alpha) * sqrt(Sigma_inf[j][j])` per state.
    pub state_half_widths: Vec2,
    /// `Phi^-1(alpha) * sqrt(K Sigma_inf K^T)`.
    pub input_half_width: f64,
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// `A + B K` for a single input.
pub fn closed_loop(a: &Mat2, b: &Vec2, k: &Vec2) -> Mat2 {
    [
        [a[0][0] + b[0] * k[0], a[0][1] + b[0] * k[1]],
        [a[1][0] + b[1] * k[0], a[1][1] + b[1] * k[1]],
    ]
}

/// Largest entry of `|Sigma - F Sigma F^T - W|`.
pub fn lyapunov_residual(f: &Mat2, w: &Mat2, sigma: &Mat2) -> f64 {
    let next = mat_mul(&mat_mul(f, sigma), &transpose(f));
    let mut r: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            r = r.max((sigma[i][j] - next[i][j] - w[i][j]).abs());
        }
    }
    r
}

/// Steady-state tube for noise `eps ~ N(0, sigma_eps^2)` entering through `B`.
pub fn compute_tube(a: &Mat2, b: &Vec2, k: &Vec2, sigma_eps: f64, alpha: f64) -> Result<TubeSpec> {
    if !(0.5..1.0).contains(&alpha) {
        return Err(Error::Config(format!("tube confidence {alpha} must lie in [0.5, 1)")));
    }
    if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) {
        return Err(Error::Config(format!(
            "noise level {sigma_eps} must be finite and >= 0"
        )));
    }
    let f = closed_loop(a, b, k);
    let rho = spectral_radius(&f);
    if !(rho < 1.0) {
        return Err(Error::Config(format!("A + BK is not stable (spectral radius {rho})")));
    }
    let s2 = sigma_eps * sigma_eps;
    let w = [
        [s2 * b[0] * b[0], s2 * b[0] * b[1]],
        [s2 * b[1] * b[0], s2 * b[1] * b[1]],
    ];
    let ft = transpose(&f);
    let mut sigma = w;
    let mut converged = false;
    for _ in 0..LYAPUNOV_MAX_ITERS {
        let fsf = mat_mul(&mat_mul(&f, &sigma), &ft);
        let mut next = [[0.0; 2]; 2];
        let mut delta: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                next[i][j] = fsf[i][j] + w[i][j];
                delta = delta.max((next[i][j] - sigma[i][j]).abs());
            }
        }
        sigma = next;
        if delta <= LYAPUNOV_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(
            "steady-state covariance iteration did not converge".into(),
        ));
    }
    // Exact symmetry keeps the half-widths consistent across faces.
    let off = 0.5 * (sigma[0][1] + sigma[1][0]);
    sigma[0][1] = off;
    sigma[1][0] = off;

    let quantile = Normal::standard().inverse_cdf(alpha).max(0.0);
    let kvar = k[0] * k[0] * sigma[0][0] + 2.0 * k[0] * k[1] * off + k[1] * k[1] * sigma[1][1];
    Ok(TubeSpec {
        k: *k,
        sigma_inf: sigma,
        alpha,
        state_half_widths: [quantile * sigma[0][0].sqrt(), quantile * sigma[1][1].sqrt()],
        input_half_width: quantile * kvar.max(0.0).sqrt(),
    })
}

impl TubeSpec {
    /// State and input bounds shrunk by the tube half-widths. An interval
    /// that would become empty collapses to its midpoint.
    pub fn tighten(&self, problem: &MpcProblem) -> MpcProblem {
        let shrink = |b: Interval, h: f64| {
            let t = Interval::new(b.lower + h, b.upper - h);
            if t.lower <= t.upper {
                t
            } else {
                let m = b.midpoint();
                Interval::new(m, m)
            }
        };
        let mut p = problem.clone();
        for (b, h) in p.state_bounds.iter_mut().zip(self.state_half_widths) {
            *b = shrink(*b, h);
        }
        p.input_bounds = shrink(p.input_bounds, self.input_half_width);
        p.robust = false;
        p.tighten_inputs = false;
        p
    }
}

/// Tube MPC: nominal plan on the noiseless model from the carried nominal
/// state `z`, applied input `v0 + K (x - z)`.
pub struct TubeController {
    a: Mat2,
    b: Vec2,
    spec: TubeSpec,
    original: MpcProblem,
    tightened: MpcProblem,
    penalty: PenaltyLoopConfig,
    startup_input: f64,
    startup_steps: usize,
    seen: usize,
    z: Option<Vec2>,
    plan: Option<Vec<f64>>,
    /// Last solve, kept for inspection.
    pub last_solve: Option<SolveResult>,
}

impl TubeController {
    pub fn new(
        a: Mat2,
        b: Vec2,
        spec: TubeSpec,
        problem: MpcProblem,
        penalty: PenaltyLoopConfig,
        startup_input: f64,
        startup_steps: usize,
    ) -> Result<Self> {
        problem.validate()?;
        penalty.validate()?;
        if problem.n_states() != 2 {
            return Err(Error::Config("the tube baseline is defined for two states".into()));
        }
        let tightened = spec.tighten(&problem);
        Ok(Self {
            a,
            b,
            spec,
            original: problem,
            tightened,
            penalty,
            startup_input,
            startup_steps,
            seen: 0,
            z: None,
            plan: None,
            last_solve: None,
        })
    }

    pub fn spec(&self) -> &TubeSpec {
        &self.spec
    }

    pub fn tightened_problem(&self) -> &MpcProblem {
        &self.tightened
    }

    /// Nominal state the next plan starts from.
    pub fn nominal_state(&self) -> Option<Vec2> {
        self.z
    }

    fn advance(&mut self, z: Vec2, v0: f64) {
        let az = mat_vec(&self.a, &z);
        self.z = Some([az[0] + self.b[0] * v0, az[1] + self.b[1] * v0]);
    }
}

impl Controller for TubeController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Tube
    }

    fn step(&mut self, _k: usize, x: &[f64], reference: &[f64]) -> Result<StepRecord> {
        if x.len() != 2 {
            return Err(Error::Input(format!(
                "tube controller expects 2 states, got {}",
                x.len()
            )));
        }
        self.seen += 1;
        if self.seen <= self.startup_steps {
            let u = self.original.input_bounds.clamp(self.startup_input);
            return Ok(StepRecord::startup(u));
        }
        let x = [x[0], x[1]];
        let z = *self.z.get_or_insert(x);
        let n = self.tightened.horizon;
        let mut problem = self.tightened.clone();
        problem.reference = reference.to_vec();
        let model = LinearModel::new(&self.a, &self.b, z, n)?;
        let warm = self.plan.as_deref().map(shift_plan).unwrap_or_else(|| vec![0.0; n]);
        let solved = match augmented_lagrangian_solve(&problem, &model, &self.penalty, &warm) {
            Ok(r) => Some(r),
            Err(e) if e.is_numerical() => None,
            Err(e) => return Err(e),
        };
        let record = match solved {
            Some(result) if result.accepted => {
                let v0 = result.v_opt[0];
                let e = [x[0] - z[0], x[1] - z[1]];
                let correction = self.spec.k[0] * e[0] + self.spec.k[1] * e[1];
                let u = self.original.input_bounds.clamp(v0 + correction);
                self.plan = Some(result.v_opt.clone());
                self.advance(z, v0);
                let record = StepRecord {
                    v0,
                    u_applied: u,
                    solved: true,
                    feasible: result.feasible,
                    fallback_used: false,
                    wall_time_ms: result.wall_time_ms,
                    outer_iters: result.outer_iters,
                    inner_iters: result.inner_iters,
                    evaluations: result.evaluations,
                    loss: result.loss,
                    plan: None,
                };
                self.last_solve = Some(SolveResult { u_applied: u, ..result });
                record
            }
            other => {
                let fallback = self.plan.as_deref().map(shift_plan);
                let v0 = fallback.as_ref().map_or(self.startup_input, |p| p[0]);
                let u = self.original.input_bounds.clamp(v0);
                self.plan = fallback;
                self.advance(z, v0);
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
        Ok(record)
    }
}
