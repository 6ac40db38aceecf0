//! Elementwise activations and their backward passes.

use crate::par;
use crate::tensor::{Element, Tensor};

/// Elementwise max(0, x).
pub fn relu<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let mut out = input.clone();
    par::for_each_chunk_mut(out.data_mut(), chunk(input.len()), |_, c| {
        for v in c {
            if *v < E::ZERO {
                *v = E::ZERO;
            }
        }
    });
    out
}

/// Passes the gradient where the forward input was > 0; the gradient at
/// exactly 0 is defined as 0.
pub fn relu_backward<E: Element>(input: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    debug_assert!(input.same_dims(grad_out));
    let mut grad = grad_out.clone();
    let x = input.data();
    let n = chunk(x.len());
    par::for_each_chunk_mut(grad.data_mut(), n, |i, c| {
        for (g, &x) in c.iter_mut().zip(&x[i * n..]) {
            if x <= E::ZERO {
                *g = E::ZERO;
            }
        }
    });
    grad
}

/// Elementwise logistic function. Outputs are clamped a small margin away
/// from 0 and 1 so the open-interval contract survives float saturation.
pub fn sigmoid<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let mut out = input.clone();
    let lo = E::SIGMOID_MARGIN;
    let hi = E::ONE - E::SIGMOID_MARGIN;
    par::for_each_chunk_mut(out.data_mut(), chunk(input.len()), |_, c| {
        for v in c {
            let y = E::ONE / (E::ONE + (-*v).exp());
            *v = if y < lo {
                lo
            } else if y > hi {
                hi
            } else {
                y
            };
        }
    });
    out
}

/// Backward through the logistic function using the forward output:
/// dx = dy · y · (1 − y).
pub fn sigmoid_backward<E: Element>(output: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    debug_assert!(output.same_dims(grad_out));
    let mut grad = grad_out.clone();
    let y = output.data();
    let n = chunk(y.len());
    par::for_each_chunk_mut(grad.data_mut(), n, |i, c| {
        for (g, &y) in c.iter_mut().zip(&y[i * n..]) {
            *g *= y * (E::ONE - y);
        }
    });
    grad
}

fn chunk(len: usize) -> usize {
    (len / 64).max(4096).min(len.max(1))
}
