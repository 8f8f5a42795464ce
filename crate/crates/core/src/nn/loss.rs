//! Masked error measures over the two velocity components.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean squared residual over the fluid pixels of both components, halved:
/// `Σ m·((px−tx)² + (py−ty)²) / (2·Σ m)`. Returns the loss and its
/// gradients with respect to `pred_vx` and `pred_vy`.
pub fn masked_mse(pred_vx: &Tensor, pred_vy: &Tensor, target_vx: &Tensor, target_vy: &Tensor, mask: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    for t in [pred_vy, target_vx, target_vy, mask] {
        if t.shape() != pred_vx.shape() {
            return Err(Error::Shape(format!("loss operands {:?} and {:?} differ", pred_vx.shape(), t.shape())));
        }
    }
    let count: f64 = 2.0 * mask.data().iter().sum::<f64>();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(2);
    for (p, t) in [(pred_vx, target_vx), (pred_vy, target_vy)] {
        let mut g = Tensor::zeros(p.shape());
        for (i, gi) in g.data_mut().iter_mut().enumerate() {
            let m = mask.data()[i];
            if m == 0.0 {
                continue;
            }
            let r = p.data()[i] - t.data()[i];
            loss += m * r * r;
            *gi = 2.0 * m * r / count;
        }
        grads.push(g);
    }
    let loss = if count > 0.0 { loss / count } else { 0.0 };
    let gy = grads.pop().expect("two grads");
    let gx = grads.pop().expect("two grads");
    Ok((loss, gx, gy))
}

/// `sqrt(Σ m·((px−tx)² + (py−ty)²) / (2·Σ m))` over flat slices; zero when
/// the mask is empty.
pub fn masked_rmse(pred_vx: &[f64], pred_vy: &[f64], target_vx: &[f64], target_vy: &[f64], mask: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for i in 0..mask.len() {
        let m = mask[i];
        if m == 0.0 {
            continue;
        }
        sum += m * ((pred_vx[i] - target_vx[i]).powi(2) + (pred_vy[i] - target_vy[i]).powi(2));
        count += 2.0 * m;
    }
    if count > 0.0 {
        (sum / count).sqrt()
    } else {
        0.0
    }
}
