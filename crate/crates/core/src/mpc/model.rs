use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, QuantileForecast, TimeSeriesWindow};
use crate::plant::{Mat2, Vec2};

/// Prediction model used inside a horizon solve: maps the nominal input
/// sequence to per-level state trajectories on a tape.
pub trait HorizonModel {
    fn horizon(&self) -> usize;
    fn n_targets(&self) -> usize;
    fn levels(&self) -> &[f64];
    /// Per-feature scale dividing constraint residuals.
    fn constraint_scale(&self) -> Vec<f64>;
    /// `v` is `[N, 1]`; returns one `[N, D]` tensor per level, in raw units.
    fn predict(&self, tape: &Tape, v: &Tensor) -> Result<Vec<Tensor>>;

    fn median_index(&self) -> usize {
        self.levels().iter().position(|&q| q == 0.5).unwrap_or(0)
    }

    /// Crossing-repaired forecast for a fixed input sequence.
    fn forecast(&self, v: &[f64]) -> Result<QuantileForecast> {
        let tape = Tape::no_grad();
        let v = Tensor::new(vec![v.len(), 1], v.to_vec())?;
        let outputs = self.predict(&tape, &v)?;
        let (n, d, l) = (self.horizon(), self.n_targets(), outputs.len());
        let mut values = vec![0.0; n * d * l];
        for (j, out) in outputs.iter().enumerate() {
            for (i, x) in out.data().iter().enumerate() {
                values[i * l + j] = *x;
            }
        }
        let mut f = QuantileForecast {
            horizon: n,
            n_targets: d,
            levels: self.levels().to_vec(),
            values,
        };
        f.repair_crossings();
        Ok(f)
    }
}

/// The learned forecaster conditioned on one history window. Extra covariate
/// columns, if any, are held at the values stored in the window.
pub struct ForecasterModel<'a> {
    pub model: &'a Forecaster,
    pub window: TimeSeriesWindow,
}

impl HorizonModel for ForecasterModel<'_> {
    fn horizon(&self) -> usize {
        self.model.config().horizon
    }

    fn n_targets(&self) -> usize {
        self.model.config().n_targets
    }

    fn levels(&self) -> &[f64] {
        &self.model.config().quantile_levels
    }

    fn constraint_scale(&self) -> Vec<f64> {
        self.model.normalization().target_std.clone()
    }

    fn predict(&self, tape: &Tape, v: &Tensor) -> Result<Vec<Tensor>> {
        let m = self.model.config().n_covariates;
        let covariates = if m == 1 {
            v.clone()
        } else {
            let n = self.horizon();
            let extra: Vec<f64> = self
                .window
                .future_covariates
                .chunks(m)
                .flat_map(|row| row[1..].iter().copied())
                .collect();
            tape.concat_cols(&[v.clone(), Tensor::new(vec![n, m - 1], extra)?])?
        };
        self.model.forecast_on_tape(tape, &self.window, &covariates)
    }
}

/// Exact noiseless two-state linear model `x+ = A x + B v` from `x0`,
/// written as `X = free + G v`.
pub struct LinearModel {
    horizon: usize,
    free: Tensor,
    gain: Tensor,
}

impl LinearModel {
    pub fn new(a: &Mat2, b: &Vec2, x0: Vec2, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Input("horizon must be >= 1".into()));
        }
        let mul = |m: &Mat2, x: &Vec2| [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]];
        let mut free = Vec::with_capacity(2 * horizon);
        let mut x = x0;
        for _ in 0..horizon {
            x = mul(a, &x);
            free.extend_from_slice(&x);
        }
        // Column j holds the response of every step to a unit input at step j.
        let mut gain = vec![0.0; 2 * horizon * horizon];
        for j in 0..horizon {
            let mut x = *b;
            for i in j..horizon {
                gain[(2 * i) * horizon + j] = x[0];
                gain[(2 * i + 1) * horizon + j] = x[1];
                x = mul(a, &x);
            }
        }
        Ok(Self {
            horizon,
            free: Tensor::new(vec![horizon, 2], free)?,
            gain: Tensor::new(vec![2 * horizon, horizon], gain)?,
        })
    }
}

impl HorizonModel for LinearModel {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_targets(&self) -> usize {
        2
    }

    fn levels(&self) -> &[f64] {
        &[0.5]
    }

    fn constraint_scale(&self) -> Vec<f64> {
        vec![1.0, 1.0]
    }

    fn predict(&self, tape: &Tape, v: &Tensor) -> Result<Vec<Tensor>> {
        let forced = tape.reshape(&tape.matmul(&self.gain, v)?, vec![self.horizon, 2])?;
        Ok(vec![tape.add(&forced, &self.free)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{LtiPlant, BENCHMARK_A, BENCHMARK_B};
    use crate::seed::{self, Stream};

    #[test]
    fn linear_model_matches_noiseless_simulation() {
        let plant = LtiPlant::benchmark(seed::rng(0, Stream::Plant, 0));
        let v = [1.0, -2.0, 0.5, 3.0, 0.0];
        let x0 = [0.7, -1.1];
        let sim = plant.simulate_noiseless(x0, &v);
        let model = LinearModel::new(&BENCHMARK_A, &BENCHMARK_B, x0, v.len()).unwrap();
        let f = model.forecast(&v).unwrap();
        for t in 0..v.len() {
            for d in 0..2 {
                assert!((f.median(t, d) - sim[t + 1][d]).abs() < 1e-12);
            }
        }
    }
}
