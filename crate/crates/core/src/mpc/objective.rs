use serde::{Deserialize, Serialize};

use super::problem::{Interval, MpcProblem};
use crate::forecaster::QuantileForecast;

/// Which face of a state bound a residual refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

/// Finite bound faces in residual order: per state, upper then lower.
pub fn constraint_faces(bounds: &[Interval]) -> Vec<(usize, Side)> {
    let mut faces = Vec::new();
    for (d, b) in bounds.iter().enumerate() {
        if b.upper.is_finite() {
            faces.push((d, Side::Upper));
        }
        if b.lower.is_finite() {
            faces.push((d, Side::Lower));
        }
    }
    faces
}

/// Tracking cost of the median plus input cost, evaluated with plain loops.
/// `median` is `N x D`, `reference` is `N x tracked`.
pub fn mpc_loss(v: &[f64], median: &[f64], problem: &MpcProblem) -> f64 {
    let d = problem.n_states();
    let t = problem.tracked.len();
    let mut loss = 0.0;
    for i in 0..problem.horizon {
        let e: Vec<f64> = problem
            .tracked
            .iter()
            .enumerate()
            .map(|(j, &s)| median[i * d + s] - problem.reference[i * t + j])
            .collect();
        for a in 0..t {
            for b in 0..t {
                loss += e[a] * problem.q[a][b] * e[b];
            }
        }
        let du = if problem.delta_u {
            v[i] - if i == 0 { problem.previous_input } else { v[i - 1] }
        } else {
            v[i]
        };
        loss += problem.r * du * du;
    }
    loss
}

/// Residuals `c <= 0` when satisfied, `N x faces` in raw units. The robust
/// variant compares the outermost quantiles with the bounds, the nominal
/// variant the median.
pub fn quantile_constraints(forecast: &QuantileForecast, bounds: &[Interval], robust: bool) -> Vec<f64> {
    let faces = constraint_faces(bounds);
    let mut out = Vec::with_capacity(forecast.horizon * faces.len());
    for t in 0..forecast.horizon {
        for &(d, side) in &faces {
            let c = match (side, robust) {
                (Side::Upper, true) => forecast.upper(t, d) - bounds[d].upper,
                (Side::Upper, false) => forecast.median(t, d) - bounds[d].upper,
                (Side::Lower, true) => bounds[d].lower - forecast.lower(t, d),
                (Side::Lower, false) => bounds[d].lower - forecast.median(t, d),
            };
            out.push(c);
        }
    }
    out
}

/// Tightened input interval for one forecast step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightenedInput {
    pub bounds: Interval,
    /// The Pontryagin difference was empty; `bounds` collapses to its midpoint.
    pub empty: bool,
}

/// Interval image `K Z` of the box `Z = [lower - median, upper - median]`.
pub fn gain_image(k: &[f64], lo: &[f64], hi: &[f64]) -> Interval {
    let (mut a, mut b) = (0.0, 0.0);
    for ((k, l), h) in k.iter().zip(lo).zip(hi) {
        a += (k * l).min(k * h);
        b += (k * l).max(k * h);
    }
    Interval::new(a, b)
}

/// `U ⊖ K Z_t` for every forecast step `t`.
pub fn tighten_input_bounds(input_bounds: Interval, k: &[f64], forecast: &QuantileForecast) -> Vec<TightenedInput> {
    let d = forecast.n_targets;
    (0..forecast.horizon)
        .map(|t| {
            let lo: Vec<f64> = (0..d).map(|j| forecast.lower(t, j) - forecast.median(t, j)).collect();
            let hi: Vec<f64> = (0..d).map(|j| forecast.upper(t, j) - forecast.median(t, j)).collect();
            let kz = gain_image(k, &lo, &hi);
            let tight = Interval::new(input_bounds.lower - kz.lower, input_bounds.upper - kz.upper);
            if tight.lower <= tight.upper {
                TightenedInput {
                    bounds: tight,
                    empty: false,
                }
            } else {
                let m = tight.midpoint();
                TightenedInput {
                    bounds: Interval::new(m, m),
                    empty: true,
                }
            }
        })
        .collect()
}

/// `u = v0 + K e`, clamped to the input bounds.
pub fn apply_ancillary(v0: f64, e: &[f64], k: &[f64], input_bounds: Interval) -> f64 {
    let correction: f64 = k.iter().zip(e).map(|(k, e)| k * e).sum();
    input_bounds.clamp(v0 + correction)
}
