use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over entries where `mask == 1`.
pub fn masked_bce(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() || pred.shape() != mask.shape() {
        return Err(Error::Dimension(format!(
            "masked_bce shapes {:?} / {:?} / {:?}",
            pred.shape(),
            target.shape(),
            mask.shape()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((&p, &y), &m) in pred.data().iter().zip(target.data()).zip(mask.data()) {
        if m == 0.0 {
            continue;
        }
        if y != 0.0 && y != 1.0 {
            return Err(Error::Data(format!("target {y} is not a binary label")));
        }
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= if y == 1.0 { p.ln() } else { (1.0 - p).ln() };
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoObservedLabels);
    }
    Ok(total / count as f64)
}

/// Gradient of [`masked_bce`] with respect to the pre-sigmoid logits.
pub(crate) fn masked_bce_logit_grad(
    prob: &Tensor,
    target: &Tensor,
    mask: &Tensor,
) -> Result<Tensor> {
    let count = mask.data().iter().filter(|&&m| m != 0.0).count();
    if count == 0 {
        return Err(Error::NoObservedLabels);
    }
    let scale = 1.0 / count as f64;
    let data = prob
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .map(|((&p, &y), &m)| {
            // inside the clamp the derivative is zero
            if m == 0.0 || !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                0.0
            } else {
                (p - y) * scale
            }
        })
        .collect();
    Tensor::new(prob.shape().to_vec(), data)
}
