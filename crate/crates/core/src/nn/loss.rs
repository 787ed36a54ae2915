use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

/// Mean over rows of `-w * ln(max(p_target, 1e-12))` and its gradient with
/// respect to the probabilities.
///
/// `probs` rows are the `(batch, time)` positions; `targets` and `weights`
/// hold one entry per row.
pub fn weighted_cross_entropy<F: Scalar>(
    probs: &Tensor<F>,
    targets: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor<F>)> {
    let k = probs.channels();
    let rows = probs.batch() * probs.len();
    if targets.len() != rows || weights.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} prediction rows, {} targets, {} weights",
            targets.len(),
            weights.len()
        )));
    }
    if rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grad = Tensor::zeros(probs.batch(), probs.len(), k);
    let mut loss = 0.0;
    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        if t >= k {
            return Err(Error::InvalidArgument(format!("target class {t} >= {k}")));
        }
        let p = probs.data()[r * k + t].f64();
        loss -= w * p.max(PROB_FLOOR).ln();
        if p > PROB_FLOOR {
            grad.data_mut()[r * k + t] = F::of(-w / (rows as f64 * p));
        }
    }
    Ok((loss / rows as f64, grad))
}
