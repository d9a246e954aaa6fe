//! Ground-truth plants for data generation and closed-loop simulation.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed::Rng;

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

/// State matrix of the benchmark system.
pub const BENCHMARK_A: Mat2 = [[0.3, 0.1], [0.1, 0.2]];
/// Input matrix of the benchmark system.
pub const BENCHMARK_B: Vec2 = [0.5, 1.0];
/// Standard deviation of the additive input noise.
pub const BENCHMARK_SIGMA: f64 = 0.1;
/// Excitation and actuator range of the benchmark.
pub const BENCHMARK_INPUT_BOUNDS: (f64, f64) = (-5.0, 5.0);

/// Result of one plant transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec2,
    /// Input noise realized on this step.
    pub eps: f64,
}

/// Discrete-time plant driven by a scalar input.
pub trait Plant {
    fn state(&self) -> Vec2;
    fn reset(&mut self, x0: Vec2);
    fn step(&mut self, u: f64) -> Result<Transition>;
    fn state_dim(&self) -> usize {
        2
    }
}

pub fn mat_vec(a: &Mat2, x: &Vec2) -> Vec2 {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

/// Largest eigenvalue modulus of a 2x2 matrix.
pub fn spectral_radius(a: &Mat2) -> f64 {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (tr / 2.0 + s).abs().max((tr / 2.0 - s).abs())
    } else {
        det.sqrt()
    }
}

fn noise_dist(sigma: f64) -> Result<Option<Normal<f64>>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "noise standard deviation {sigma} must be finite and >= 0"
        )));
    }
    if sigma == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, sigma)
        .map(Some)
        .map_err(|e| Error::Config(e.to_string()))
}

/// `x+ = A x + B (u + eps)`, `eps ~ N(0, sigma^2)`.
#[derive(Clone, Debug)]
pub struct LtiPlant {
    a: Mat2,
    b: Vec2,
    sigma: f64,
    noise: Option<Normal<f64>>,
    state: Vec2,
    rng: Rng,
}

impl LtiPlant {
    pub fn new(a: Mat2, b: Vec2, sigma: f64, rng: Rng) -> Result<Self> {
        let rho = spectral_radius(&a);
        if rho >= 1.0 {
            return Err(Error::Config(format!(
                "state matrix is not stable (spectral radius {rho})"
            )));
        }
        Ok(Self {
            a,
            b,
            sigma,
            noise: noise_dist(sigma)?,
            state: [0.0; 2],
            rng,
        })
    }

    pub fn benchmark(rng: Rng) -> Self {
        Self::new(BENCHMARK_A, BENCHMARK_B, BENCHMARK_SIGMA, rng).expect("benchmark plant is stable")
    }

    /// Same dynamics with the noise switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            sigma: 0.0,
            noise: None,
            ..self.clone()
        }
    }

    pub fn a(&self) -> &Mat2 {
        &self.a
    }

    pub fn b(&self) -> &Vec2 {
        &self.b
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn transition(&self, x: &Vec2, u_total: f64) -> Vec2 {
        let ax = mat_vec(&self.a, x);
        [ax[0] + self.b[0] * u_total, ax[1] + self.b[1] * u_total]
    }

    /// Deterministic rollout with zero noise; returns `x0, x1, ..., xn`.
    pub fn simulate_noiseless(&self, x0: Vec2, inputs: &[f64]) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(inputs.len() + 1);
        let mut x = x0;
        out.push(x);
        for &u in inputs {
            x = self.transition(&x, u);
            out.push(x);
        }
        out
    }
}

impl Plant for LtiPlant {
    fn state(&self) -> Vec2 {
        self.state
    }

    fn reset(&mut self, x0: Vec2) {
        self.state = x0;
    }

    fn step(&mut self, u: f64) -> Result<Transition> {
        if !u.is_finite() {
            return Err(Error::Input(format!("non-finite plant input {u}")));
        }
        let eps = match &self.noise {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        };
        self.state = self.transition(&self.state, u + eps);
        Ok(Transition { state: self.state, eps })
    }
}

/// Mildly saturating variant `x+ = A x + B (u_max tanh(u / u_max) + eps)`.
///
/// Not part of the benchmark; exercises the solver on a nonlinear plant.
#[derive(Clone, Debug)]
pub struct SaturatingPlant {
    inner: LtiPlant,
    u_max: f64,
}

impl SaturatingPlant {
    pub fn new(inner: LtiPlant, u_max: f64) -> Result<Self> {
        if !(u_max > 0.0) {
            return Err(Error::Config(format!("saturation level {u_max} must be positive")));
        }
        Ok(Self { inner, u_max })
    }

    pub fn effective_input(&self, u: f64) -> f64 {
        self.u_max * (u / self.u_max).tanh()
    }
}

impl Plant for SaturatingPlant {
    fn state(&self) -> Vec2 {
        self.inner.state
    }

    fn reset(&mut self, x0: Vec2) {
        self.inner.reset(x0);
    }

    fn step(&mut self, u: f64) -> Result<Transition> {
        if !u.is_finite() {
            return Err(Error::Input(format!("non-finite plant input {u}")));
        }
        self.inner.step(self.effective_input(u))
    }
}

/// I.i.d. uniform inputs on `[lo, hi]`.
pub fn generate_excitation(n: usize, bounds: (f64, f64), rng: &mut Rng) -> Vec<f64> {
    let (lo, hi) = bounds;
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

/// One row of a plant trajectory: state at `time` and the input applied there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub time: usize,
    pub u_applied: f64,
    pub eps: f64,
    pub x: Vec2,
}

/// Drives `plant` from its current state with `inputs`. Row `k` holds the
/// state before input `k` is applied and the noise realized during that step.
pub fn rollout(plant: &mut dyn Plant, inputs: &[f64]) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::with_capacity(inputs.len());
    for (time, &u) in inputs.iter().enumerate() {
        let x = plant.state();
        let t = plant.step(u)?;
        rows.push(TrajectoryRow {
            time,
            u_applied: u,
            eps: t.eps,
            x,
        });
    }
    Ok(rows)
}

/// Writes `time,u_applied,eps,x1,x2`.
pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "time,u_applied,eps,x1,x2").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.time, r.u_applied, r.eps, r.x[0], r.x[1]).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{self, Stream};

    fn plant(seed: u64) -> LtiPlant {
        LtiPlant::benchmark(seed::rng(seed, Stream::Plant, 0))
    }

    #[test]
    fn noiseless_steps() {
        let mut p = plant(0).noiseless();
        assert_eq!(p.step(1.0).unwrap().state, [0.5, 1.0]);
        p.reset([1.0, 1.0]);
        let s = p.step(0.0).unwrap().state;
        assert!((s[0] - 0.4).abs() < 1e-15 && (s[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_input_and_unstable_matrix() {
        assert!(plant(0).step(f64::NAN).is_err());
        let rng = seed::rng(0, Stream::Plant, 0);
        assert!(LtiPlant::new([[1.1, 0.0], [0.0, 0.2]], BENCHMARK_B, 0.1, rng).is_err());
    }

    #[test]
    fn noise_mean_within_clt_bound() {
        let mut p = plant(11);
        let n = 100_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            p.reset([0.0, 0.0]);
            let s = p.step(0.0).unwrap().state;
            mean[0] += s[0] / n as f64;
            mean[1] += s[1] / n as f64;
        }
        let norm_b = (0.5f64.powi(2) + 1.0).sqrt();
        let bound = 4.0 * BENCHMARK_SIGMA * norm_b / (n as f64).sqrt();
        assert!((mean[0].powi(2) + mean[1].powi(2)).sqrt() < bound);
    }

    #[test]
    fn noiseless_rollouts() {
        let p = plant(0);
        let zero = p.simulate_noiseless([0.0, 0.0], &[0.0; 50]);
        assert!(zero.iter().all(|x| *x == [0.0, 0.0]));

        // steady state for u = 1 by solving (I - A) x = B with Cramer's rule
        let (a, b) = (BENCHMARK_A, BENCHMARK_B);
        let m = [[1.0 - a[0][0], -a[0][1]], [-a[1][0], 1.0 - a[1][1]]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let xs = [
            (b[0] * m[1][1] - m[0][1] * b[1]) / det,
            (m[0][0] * b[1] - m[1][0] * b[0]) / det,
        ];
        let last = *p.simulate_noiseless([0.0, 0.0], &[1.0; 200]).last().unwrap();
        assert!((last[0] - xs[0]).abs() < 1e-12 && (last[1] - xs[1]).abs() < 1e-12);

        let mut q = p.noiseless();
        q.reset([0.3, -0.2]);
        let one = p.simulate_noiseless([0.3, -0.2], &[0.7]);
        assert_eq!(q.step(0.7).unwrap().state, one[1]);
    }

    #[test]
    fn bounded_under_bounded_input() {
        let p = plant(0);
        let mut rng = seed::rng(5, Stream::Data, 0);
        let u = generate_excitation(10_000, BENCHMARK_INPUT_BOUNDS, &mut rng);
        let traj = p.simulate_noiseless([50.0, -50.0], &u);
        assert!(traj
            .iter()
            .skip(1)
            .all(|x| (x[0].powi(2) + x[1].powi(2)).sqrt() < 100.0));
    }

    #[test]
    fn excitation_support_determinism_and_mean() {
        let draw = |s| generate_excitation(20_000, (-5.0, 5.0), &mut seed::rng(s, Stream::Data, 0));
        let u = draw(9);
        assert!(u.iter().all(|v| (-5.0..=5.0).contains(v)));
        assert_eq!(u, draw(9));
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        // uniform on [-5, 5] has sd 10 / sqrt(12)
        let se = 10.0 / 12f64.sqrt() / (u.len() as f64).sqrt();
        assert!(mean.abs() < 4.0 * se);
    }

    #[test]
    fn noisy_minus_noiseless_is_zero_mean() {
        let steps = 20;
        let reps = 1000;
        let inputs: Vec<f64> = (0..steps).map(|k| (k as f64 * 0.7).sin() * 3.0).collect();
        let clean = plant(0).simulate_noiseless([0.0, 0.0], &inputs);
        let mut sum = vec![[0.0; 2]; steps];
        let mut sum_sq = vec![[0.0; 2]; steps];
        for r in 0..reps {
            let mut p = LtiPlant::benchmark(seed::rng(77, Stream::Plant, r));
            let rows = rollout(&mut p, &inputs).unwrap();
            for (k, row) in rows.iter().enumerate().skip(1) {
                for d in 0..2 {
                    let diff = row.x[d] - clean[k][d];
                    sum[k][d] += diff;
                    sum_sq[k][d] += diff * diff;
                }
            }
        }
        for k in 1..steps {
            for d in 0..2 {
                let mean = sum[k][d] / reps as f64;
                let var = sum_sq[k][d] / reps as f64 - mean * mean;
                let se = (var / reps as f64).sqrt();
                assert!(mean.abs() < 5.0 * se, "step {k} dim {d}: {mean} vs se {se}");
            }
        }
    }

    #[test]
    fn saturating_plant_compresses_large_inputs() {
        let inner = plant(0).noiseless();
        let mut sat = SaturatingPlant::new(inner, 3.0).unwrap();
        assert!((sat.effective_input(0.01) - 0.01).abs() < 1e-6);
        assert!(sat.effective_input(5.0) < 3.0);
        assert!(sat.effective_input(100.0) <= 3.0);
        let s = sat.step(100.0).unwrap().state;
        assert!(s[1] <= 3.0);
    }
}
