//! Parameter layout and forward pass of the dense encoder/decoder network.

use rand::Rng as _;

use super::ForecasterConfig;
use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct ResidualBlock {
    hidden: Dense,
    out: Dense,
    skip: Dense,
    norm: Option<(usize, usize)>,
}

/// Temporal decoder: shared hidden layer, one output head per quantile level.
#[derive(Clone, Debug)]
pub(crate) struct TemporalDecoder {
    hidden: Dense,
    heads: Vec<(Dense, Dense)>,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    projection: ResidualBlock,
    encoder: Vec<ResidualBlock>,
    decoder: Vec<ResidualBlock>,
    temporal: TemporalDecoder,
    lookback: Dense,
}

/// Named parameter tensors in construction order.
pub(crate) struct ParamSet {
    pub names: Vec<String>,
    pub values: Vec<Tensor>,
}

struct Builder<'a> {
    names: Vec<String>,
    values: Vec<Tensor>,
    rng: Option<&'a mut Rng>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> usize {
        self.names.push(name);
        self.values
            .push(Tensor::new(shape, data).expect("builder shapes are consistent"));
        self.values.len() - 1
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            match self.rng.as_deref_mut() {
                Some(rng) => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                None => vec![0.0; n],
            }
        };
        let w = draw(fan_in * fan_out);
        let b = draw(fan_out);
        Dense {
            w: self.push(format!("{name}.weight"), vec![fan_in, fan_out], w),
            b: self.push(format!("{name}.bias"), vec![fan_out], b),
        }
    }

    fn residual(&mut self, name: &str, input: usize, hidden: usize, output: usize, layer_norm: bool) -> ResidualBlock {
        let hidden_layer = self.dense(&format!("{name}.hidden"), input, hidden);
        let out = self.dense(&format!("{name}.out"), hidden, output);
        let skip = self.dense(&format!("{name}.skip"), input, output);
        let norm = layer_norm.then(|| {
            (
                self.push(format!("{name}.norm.gamma"), vec![output], vec![1.0; output]),
                self.push(format!("{name}.norm.beta"), vec![output], vec![0.0; output]),
            )
        });
        ResidualBlock {
            hidden: hidden_layer,
            out,
            skip,
            norm,
        }
    }
}

impl Layout {
    /// Builds the layout and its initial parameters; `rng = None` gives all-zero weights.
    pub fn build(c: &ForecasterConfig, rng: Option<&mut Rng>) -> (Layout, ParamSet) {
        let mut b = Builder {
            names: Vec::new(),
            values: Vec::new(),
            rng,
        };
        let (w, n, d, m, tw) = (c.window, c.horizon, c.n_targets, c.n_covariates, c.temporal_width);
        let projection = b.residual("projection", m, c.hidden_size, tw, c.layer_norm);
        let encoder_in = w * d + (w + n) * tw;
        let encoder = (0..c.encoder_layers)
            .map(|i| {
                let input = if i == 0 { encoder_in } else { c.hidden_size };
                b.residual(
                    &format!("encoder.{i}"),
                    input,
                    c.hidden_size,
                    c.hidden_size,
                    c.layer_norm,
                )
            })
            .collect();
        let decoder = (0..c.decoder_layers)
            .map(|i| {
                let output = if i + 1 == c.decoder_layers {
                    n * c.decoder_output_dim
                } else {
                    c.hidden_size
                };
                b.residual(
                    &format!("decoder.{i}"),
                    c.hidden_size,
                    c.hidden_size,
                    output,
                    c.layer_norm,
                )
            })
            .collect();
        let temporal_in = c.decoder_output_dim + tw;
        let hidden = b.dense("temporal.hidden", temporal_in, c.decoder_hidden);
        let heads = (0..c.n_levels())
            .map(|j| {
                (
                    b.dense(&format!("temporal.head{j}.out"), c.decoder_hidden, d),
                    b.dense(&format!("temporal.head{j}.skip"), temporal_in, d),
                )
            })
            .collect();
        let lookback = b.dense("lookback", w * d, n * d);
        (
            Layout {
                projection,
                encoder,
                decoder,
                temporal: TemporalDecoder { hidden, heads },
                lookback,
            },
            ParamSet {
                names: b.names,
                values: b.values,
            },
        )
    }

    /// Indices of output-head biases, one per level (used by tests).
    #[cfg(test)]
    pub fn head_biases(&self) -> Vec<usize> {
        self.temporal.heads.iter().map(|(out, _)| out.b).collect()
    }

    #[cfg(test)]
    pub fn lookback_bias(&self) -> usize {
        self.lookback.b
    }
}

/// Normalized network inputs for a batch of `B` windows.
pub(crate) struct NetInputs {
    /// `[B, w*D]`
    pub past_targets: Tensor,
    /// `[B*w, m]`
    pub past_covariates: Tensor,
    /// `[B*N, m]`
    pub future_covariates: Tensor,
}

pub(crate) struct Net<'a> {
    pub config: &'a ForecasterConfig,
    pub layout: &'a Layout,
    pub params: &'a [Tensor],
}

impl Net<'_> {
    fn dense(&self, tape: &Tape, x: &Tensor, d: Dense) -> Result<Tensor> {
        tape.linear(x, &self.params[d.w], &self.params[d.b])
    }

    fn residual(
        &self,
        tape: &Tape,
        x: &Tensor,
        block: &ResidualBlock,
        dropout: &mut Option<&mut Rng>,
    ) -> Result<Tensor> {
        let h = tape.relu(&self.dense(tape, x, block.hidden)?)?;
        let mut out = self.dense(tape, &h, block.out)?;
        if let Some(rng) = dropout.as_deref_mut() {
            out = tape.dropout(&out, self.config.dropout, rng)?;
        }
        let skip = self.dense(tape, x, block.skip)?;
        let y = tape.add(&out, &skip)?;
        match block.norm {
            Some((g, b)) => tape.layer_norm(&y, &self.params[g], &self.params[b]),
            None => Ok(y),
        }
    }

    /// One forward pass; returns per-level `[B*N, D]` tensors in normalized units.
    /// Dropout is applied only when `dropout` carries a generator.
    pub fn forward(&self, tape: &Tape, inputs: &NetInputs, mut dropout: Option<&mut Rng>) -> Result<Vec<Tensor>> {
        let c = self.config;
        let (w, n, d, tw) = (c.window, c.horizon, c.n_targets, c.temporal_width);
        let batch = inputs.past_targets.shape()[0];

        let past_proj = self.residual(tape, &inputs.past_covariates, &self.layout.projection, &mut dropout)?;
        let future_proj = self.residual(tape, &inputs.future_covariates, &self.layout.projection, &mut dropout)?;
        let past_flat = tape.reshape(&past_proj, vec![batch, w * tw])?;
        let future_flat = tape.reshape(&future_proj, vec![batch, n * tw])?;

        let mut h = tape.concat_cols(&[inputs.past_targets.clone(), past_flat, future_flat])?;
        for block in self.layout.encoder.iter().chain(&self.layout.decoder) {
            h = self.residual(tape, &h, block, &mut dropout)?;
        }
        let decoded = tape.reshape(&h, vec![batch * n, c.decoder_output_dim])?;
        let temporal_in = tape.concat_cols(&[decoded, future_proj])?;

        let td = &self.layout.temporal;
        let mut hidden = tape.relu(&self.dense(tape, &temporal_in, td.hidden)?)?;
        if let Some(rng) = dropout {
            hidden = tape.dropout(&hidden, c.dropout, rng)?;
        }
        let lookback = self.dense(tape, &inputs.past_targets, self.layout.lookback)?;
        let lookback = tape.reshape(&lookback, vec![batch * n, d])?;

        let median = c.median_index();
        td.heads
            .iter()
            .enumerate()
            .map(|(j, (out, skip))| {
                let y = tape.add(
                    &self.dense(tape, &hidden, *out)?,
                    &self.dense(tape, &temporal_in, *skip)?,
                )?;
                if j == median {
                    tape.add(&y, &lookback)
                } else {
                    Ok(y)
                }
            })
            .collect()
    }
}
