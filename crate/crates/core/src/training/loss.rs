use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Pinball loss of one prediction at level `q`.
pub fn quantile_loss_single(q: f64, y: f64, y_hat: f64) -> f64 {
    if y >= y_hat {
        q * (y - y_hat)
    } else {
        (1.0 - q) * (y_hat - y)
    }
}

/// Total loss of one forecast: `forecasts` is `N x D x l`, `labels` is `N x D`.
/// Averaged over steps and levels, summed over target dimensions.
pub fn quantile_loss_total(levels: &[f64], forecasts: &[f64], labels: &[f64], horizon: usize) -> Result<f64> {
    let l = levels.len();
    if l == 0 || labels.len() * l != forecasts.len() || horizon == 0 || !labels.len().is_multiple_of(horizon) {
        return Err(Error::Input(format!(
            "{} forecast values and {} labels do not match {l} levels over {horizon} steps",
            forecasts.len(),
            labels.len()
        )));
    }
    let total: f64 = labels
        .iter()
        .zip(forecasts.chunks(l))
        .map(|(&y, cell)| {
            levels
                .iter()
                .zip(cell)
                .map(|(&q, &p)| quantile_loss_single(q, y, p))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (horizon * l) as f64)
}

/// Batched pinball loss on the tape. `predictions[j]` and `labels` are
/// `[B*N, D]`; the result is the per-window total loss averaged over the batch.
pub fn quantile_loss_tape(
    tape: &Tape,
    levels: &[f64],
    predictions: &[Tensor],
    labels: &Tensor,
    horizon: usize,
) -> Result<Tensor> {
    let rows = labels.shape()[0];
    if levels.is_empty() || predictions.len() != levels.len() || horizon == 0 || !rows.is_multiple_of(horizon) {
        return Err(Error::Input(format!(
            "{} prediction tensors for {} levels over {rows} rows with horizon {horizon}",
            predictions.len(),
            levels.len()
        )));
    }
    let mut terms = Vec::with_capacity(levels.len());
    for (&q, pred) in levels.iter().zip(predictions) {
        let under = tape.sum(&tape.relu(&tape.sub(labels, pred)?)?)?;
        let over = tape.sum(&tape.relu(&tape.sub(pred, labels)?)?)?;
        terms.push(tape.add(&tape.scale(&under, q)?, &tape.scale(&over, 1.0 - q)?)?);
    }
    let mut total = terms[0].clone();
    for t in &terms[1..] {
        total = tape.add(&total, t)?;
    }
    // rows = B*N, so dividing by rows*l gives 1/(N*l) per window averaged over B.
    tape.scale(&total, 1.0 / (rows * levels.len()) as f64)
}
