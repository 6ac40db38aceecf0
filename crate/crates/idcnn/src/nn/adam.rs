//! Bias-corrected first/second-moment parameter updates.

use crate::error::{Error, Result};
use crate::tensor::Element;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state for one parameter group.
#[derive(Clone, Debug)]
pub struct AdamState<E: Element> {
    pub m: Vec<E>,
    pub v: Vec<E>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<E: Element> AdamState<E> {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![E::ZERO; len],
            v: vec![E::ZERO; len],
            t: 0,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One update step. `t` increments by exactly 1.
    pub fn step(&mut self, params: &mut [E], grads: &[E]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam_step shape mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let one_m_b1 = E::from_f64(1.0 - self.beta1);
        let one_m_b2 = E::from_f64(1.0 - self.beta2);
        let corr1 = E::from_f64(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let corr2 = E::from_f64(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr = E::from_f64(self.lr);
        let eps = E::from_f64(self.eps);

        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_m_b1 * g;
            self.v[i] = b2 * self.v[i] + one_m_b2 * g * g;
            let mhat = self.m[i] * corr1;
            let vhat = self.v[i] * corr2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}
