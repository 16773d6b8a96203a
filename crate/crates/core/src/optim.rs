//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` in place. A gradient containing NaN or
/// infinity aborts the step and leaves both `params` and `state` untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grad: &[T],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(crate::error::shape_mismatch(
            format!("{} parameters", params.len()),
            format!("{} gradients / {} moments", grad.len(), state.m.len()),
        ));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient element {i}")));
    }
    state.step += 1;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let c1 = T::one() - T::of(cfg.beta1.powi(state.step as i32));
    let c2 = T::one() - T::of(cfg.beta2.powi(state.step as i32));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
