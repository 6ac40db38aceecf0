//! Training loss: mean over batch items of the per-item mean squared
//! difference between the estimated and ground-truth noise maps.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Element, Tensor};

/// Returns the loss and the exact gradient with respect to `pred`.
///
/// All items share one element count, so the loss equals the plain mean of
/// squared differences over every element; the gradient of element i is
/// 2·(pred_i − target_i) / (n·c·h·w).
pub fn mse_loss<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<(f64, Tensor<E>)> {
    if !pred.same_dims(target) {
        return Err(Error::contract(format!(
            "mse_loss dims differ: {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("mse_loss on an empty tensor"));
    }
    let count = pred.len() as f64;
    let mut sse = 0.0;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p.to_f64() - t.to_f64();
        sse += d * d;
    }
    let loss = sse / count;

    let scale = E::from_f64(2.0 / count);
    let mut grad = pred.clone();
    let t = target.data();
    let chunk = (pred.len() / 64).max(4096).min(pred.len());
    par::for_each_chunk_mut(grad.data_mut(), chunk, |i, c| {
        for (g, &t) in c.iter_mut().zip(&t[i * chunk..]) {
            *g = (*g - t) * scale;
        }
    });
    Ok((loss, grad))
}
