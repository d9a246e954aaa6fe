//! Box-constrained limited-memory BFGS. Steps come from a weak-Wolfe search
//! inside the box, with projected Armijo backtracking as the fallback.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Stop when the 2-norm of the projected gradient falls to this value.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-5,
            max_iters: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    /// Projected-gradient 2-norm at `x`.
    pub grad_norm: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Both the quasi-Newton and the steepest-descent line searches failed.
    pub line_search_failed: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;
const MAX_BACKTRACKS: usize = 40;
/// Zoom evaluations before settling for the best Armijo point.
const MAX_ZOOM: usize = 12;

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// `x - P(x - g)`: zero exactly at box-constrained stationary points.
pub fn projected_gradient(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((x, g), (lo, hi))| x - (x - g).clamp(*lo, *hi))
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: `-H g` from the stored curvature pairs.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(q, y)| *q -= a * y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(q, s)| *q += (a - b) * s);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `f` over the box `bounds`; `f` returns the value and gradient.
/// Non-finite values are errors. The returned iterate is the best one found.
pub fn lbfgs_minimize<F>(mut f: F, x0: &[f64], bounds: &[(f64, f64)], options: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if x0.len() != bounds.len() {
        return Err(Error::Input(format!(
            "{} variables but {} bounds",
            x0.len(),
            bounds.len()
        )));
    }
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        evaluations += 1;
        let (fx, g) = f(x)?;
        if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("objective returned {fx} at {x:?}")));
        }
        Ok((fx, g))
    };
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut fx, mut g) = eval(&x)?;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.memory);
    let mut iterations = 0;
    let mut line_search_failed = false;
    let mut pg_norm = norm(&projected_gradient(&x, &g, bounds));

    while pg_norm > options.grad_tol && iterations < options.max_iters {
        // Variables held at a bound by the gradient stay fixed this step.
        let pinned: Vec<bool> = x
            .iter()
            .zip(&g)
            .zip(bounds)
            .map(|((x, g), (lo, hi))| (*x <= *lo && *g > 0.0) || (*x >= *hi && *g < 0.0))
            .collect();
        let free_g: Vec<f64> = g.iter().zip(&pinned).map(|(g, p)| if *p { 0.0 } else { *g }).collect();
        let mut d = two_loop(&free_g, &pairs);
        // Components leaving the box from an active bound are dropped too.
        let hold = |d: &mut Vec<f64>| {
            for (((d, p), x), (lo, hi)) in d.iter_mut().zip(&pinned).zip(&x).zip(bounds) {
                if *p || (*x <= *lo && *d < 0.0) || (*x >= *hi && *d > 0.0) {
                    *d = 0.0;
                }
            }
        };
        hold(&mut d);
        if dot(&d, &free_g) >= 0.0 {
            pairs.clear();
            d = free_g.iter().map(|v| -v).collect();
            hold(&mut d);
        }
        let first_step = if pairs.is_empty() { 1.0 / norm(&d).max(1.0) } else { 1.0 };

        // Wolfe search along the segment inside the box; projected
        // backtracking when that fails.
        let a_max = max_step(&x, &d, bounds);
        let mut accepted = if a_max > 0.0 {
            wolfe_search(&mut eval, &x, fx, &g, &d, first_step, a_max, bounds)?
        } else {
            search(&mut eval, &x, fx, &g, &d, first_step, bounds)?
        };
        if accepted.is_none() && !pairs.is_empty() {
            pairs.clear();
            let sd: Vec<f64> = free_g.iter().map(|v| -v).collect();
            accepted = search(&mut eval, &x, fx, &g, &sd, 1.0 / norm(&sd).max(1.0), bounds)?;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            line_search_failed = true;
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == options.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        pg_norm = norm(&projected_gradient(&x, &g, bounds));
    }
    Ok(LbfgsResult {
        converged: pg_norm <= options.grad_tol,
        x,
        f: fx,
        grad: g,
        grad_norm: pg_norm,
        iterations,
        evaluations,
        line_search_failed,
    })
}

type Point = (Vec<f64>, f64, Vec<f64>);

/// Projected backtracking along `d`; `None` when no sufficient decrease is found.
fn search<E>(
    eval: &mut E,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    first_step: f64,
    bounds: &[(f64, f64)],
) -> Result<Option<Point>>
where
    E: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut step = first_step;
    for _ in 0..MAX_BACKTRACKS {
        let mut trial: Vec<f64> = x.iter().zip(d).map(|(x, d)| x + step * d).collect();
        project(&mut trial, bounds);
        let decrease = dot(g, &trial.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>());
        if decrease < 0.0 {
            let (f_trial, g_trial) = eval(&trial)?;
            if f_trial <= fx + ARMIJO_C1 * decrease {
                return Ok(Some((trial, f_trial, g_trial)));
            }
        } else if trial == x {
            return Ok(None);
        }
        step *= 0.5;
    }
    Ok(None)
}

/// Largest `a` with `x + a d` inside the box.
fn max_step(x: &[f64], d: &[f64], bounds: &[(f64, f64)]) -> f64 {
    x.iter()
        .zip(d)
        .zip(bounds)
        .fold(f64::INFINITY, |a, ((x, d), (lo, hi))| {
            if *d > 0.0 {
                a.min((hi - x) / d)
            } else if *d < 0.0 {
                a.min((lo - x) / d)
            } else {
                a
            }
        })
}

/// Minimizer of the cubic matching values and slopes at `lo` and `hi`, or
/// of the quadratic through the values and the slope at `lo` when the cubic
/// has none; kept inside the middle 80% of the bracket.
fn interpolate(lo: f64, f_lo: f64, dlo: f64, hi: f64, f_hi: f64, dhi: f64) -> f64 {
    let h = hi - lo;
    let d1 = dlo + dhi - 3.0 * (f_lo - f_hi) / (lo - hi);
    let disc = d1 * d1 - dlo * dhi;
    let cubic = (disc >= 0.0).then(|| {
        let d2 = disc.sqrt().copysign(h);
        hi - h * (dhi + d2 - d1) / (dhi - dlo + 2.0 * d2)
    });
    let a = match cubic {
        Some(a) if a.is_finite() => a,
        _ => {
            let curvature = f_hi - f_lo - dlo * h;
            if curvature > 0.0 {
                lo - dlo * h * h / (2.0 * curvature)
            } else {
                lo + 0.5 * h
            }
        }
    };
    let (left, right) = (lo.min(hi), lo.max(hi));
    let pad = 0.1 * (right - left);
    a.clamp(left + pad, right - pad)
}

/// Weak-Wolfe line search along `d` on `(0, a_max]` (bracketing then zoom).
/// The weak curvature test tolerates the kinks of a ReLU network.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<E>(
    eval: &mut E,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    first: f64,
    a_max: f64,
    bounds: &[(f64, f64)],
) -> Result<Option<Point>>
where
    E: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let slope0 = dot(g, d);
    let mut at = |a: f64| -> Result<(Point, f64)> {
        let mut xa: Vec<f64> = x.iter().zip(d).map(|(x, d)| x + a * d).collect();
        project(&mut xa, bounds);
        let (fa, ga) = eval(&xa)?;
        let slope = dot(&ga, d);
        Ok(((xa, fa, ga), slope))
    };
    // Near a minimizer differences in `f` drown in rounding; the slope test
    // then stands in for sufficient decrease.
    let tolerance = 1e-10 * fx.abs();
    let armijo = |a: f64, fa: f64, slope: f64| {
        fa <= fx + ARMIJO_C1 * a * slope0 || (fa <= fx + tolerance && slope <= (1.0 - 2.0 * ARMIJO_C1) * -slope0)
    };
    let curvature = |slope: f64| slope >= WOLFE_C2 * slope0;

    // Bracket: (step, value, slope, point) with `lo` satisfying Armijo.
    let mut lo: (f64, f64, f64, Option<Point>) = (0.0, fx, slope0, None);
    let mut hi;
    let mut a = first.min(a_max);
    loop {
        let (p, slope) = at(a)?;
        let fa = p.1;
        if !armijo(a, fa, slope) || fa > lo.1 && lo.0 > 0.0 {
            hi = (a, fa, slope, Some(p));
            break;
        }
        if curvature(slope) {
            return Ok(Some(p));
        }
        if a >= a_max {
            return Ok(Some(p));
        }
        lo = (a, fa, slope, Some(p));
        a = (2.0 * a).min(a_max);
    }
    for _ in 0..MAX_ZOOM {
        if (hi.0 - lo.0).abs() <= f64::EPSILON * lo.0.abs().max(hi.0.abs()) {
            break;
        }
        let a = interpolate(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2);
        let (p, slope) = at(a)?;
        let fa = p.1;
        if !armijo(a, fa, slope) || fa > lo.1 + tolerance {
            hi = (a, fa, slope, Some(p));
        } else {
            if curvature(slope) {
                return Ok(Some(p));
            }
            lo = (a, fa, slope, Some(p));
        }
    }
    Ok(lo.3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{self, Stream};
    use rand::Rng as _;

    const FREE: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    /// Gaussian elimination with partial pivoting, used as the minimizer oracle.
    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    #[test]
    fn random_quadratics_reach_analytic_minimum() {
        let mut rng = seed::rng(21, Stream::Data, 0);
        let n = 10;
        for _ in 0..20 {
            let m: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let h: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                        .collect()
                })
                .collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                let hx: Vec<f64> = h.iter().map(|row| dot(row, x)).collect();
                Ok((
                    0.5 * dot(x, &hx) - dot(&c, x),
                    hx.iter().zip(&c).map(|(a, b)| a - b).collect(),
                ))
            };
            let options = LbfgsOptions {
                grad_tol: 1e-8,
                max_iters: 80,
                ..Default::default()
            };
            let r = lbfgs_minimize(f, &vec![0.0; n], &vec![FREE; n], &options).unwrap();
            assert!(
                r.converged,
                "gradient norm {} after {} iterations",
                r.grad_norm, r.iterations
            );
            let exact = solve(h.clone(), c.clone());
            for (a, b) in r.x.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rosenbrock_converges() {
        let options = LbfgsOptions {
            grad_tol: 1e-10,
            max_iters: 500,
            ..Default::default()
        };
        let r = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &[FREE; 2], &options).unwrap();
        assert!(r.f < 1e-6, "f = {} after {} iterations", r.f, r.iterations);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn optimal_start_takes_no_steps() {
        let r = lbfgs_minimize(rosenbrock, &[1.0, 1.0], &[FREE; 2], &LbfgsOptions::default()).unwrap();
        assert_eq!((r.iterations, r.evaluations), (0, 1));
        assert!(r.converged);
    }

    #[test]
    fn box_bounds_are_respected() {
        // min (x - 3)^2 + (y + 2)^2 on [0, 1] x [-1, 1] -> (1, -1).
        let f = |x: &[f64]| {
            Ok((
                (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2),
                vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 2.0)],
            ))
        };
        let r = lbfgs_minimize(f, &[0.5, 0.5], &[(0.0, 1.0), (-1.0, 1.0)], &LbfgsOptions::default()).unwrap();
        assert_eq!(r.x, vec![1.0, -1.0]);
        assert!(r.converged);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let f = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(lbfgs_minimize(f, &[0.0], &[FREE], &LbfgsOptions::default()).is_err());
    }
}
