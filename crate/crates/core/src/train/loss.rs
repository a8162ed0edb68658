use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

fn check(prob: &Tensor, labels: &Tensor) -> Result<()> {
    if prob.shape() != labels.shape() {
        return Err(Error::mismatch(format!(
            "bce: probabilities {:?} vs labels {:?}",
            prob.shape(),
            labels.shape()
        )));
    }
    if let Some(&bad) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidLabel(bad));
    }
    Ok(())
}

/// Mean binary cross-entropy over the batch.
pub fn bce_loss(prob: &Tensor, labels: &Tensor) -> Result<f64> {
    check(prob, labels)?;
    let n = prob.len() as f64;
    let total: f64 = prob
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / n)
}

/// Loss and `dL/dp = (p - y) / (p (1 - p)) / N`, evaluated at the clamped `p`.
pub fn bce_loss_and_grad(prob: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
    let loss = bce_loss(prob, labels)?;
    let n = prob.len() as f64;
    let grad = prob
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            (p - y) / (p * (1.0 - p)) / n
        })
        .collect();
    Ok((loss, Tensor::new(prob.shape(), grad)?))
}
