use super::tensor::Tensor;
use super::NnError;

/// Predictions are clamped to this floor before `ln(1 + p)`.
pub const PRED_FLOOR: f64 = -1.0 + 1e-6;

/// Mean squared logarithmic error over every entry, with its gradient.
///
/// Entries clamped at [`PRED_FLOOR`] receive the gradient evaluated at the
/// floor rather than zero, so a collapsed output is still pushed back up.
pub fn msle_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::shape("msle: prediction and target shapes differ", target.shape(), pred.shape()));
    }
    if let Some((index, &value)) = target
        .data()
        .iter()
        .enumerate()
        .find(|(_, t)| !(**t >= 0.0))
    {
        return Err(NnError::InvalidTarget { index, value });
    }
    let count = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let p = p.max(PRED_FLOOR);
        let diff = t.ln_1p() - p.ln_1p();
        loss += diff * diff;
        *g = -2.0 * diff / ((1.0 + p) * count);
    }
    Ok((loss / count, grad))
}
