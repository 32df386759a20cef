use serde::{Deserialize, Serialize};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S: Scalar = f32> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<S: Scalar>(params: &mut [S], grads: &[S], state: &mut AdamState<S>, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state length differs");
    state.t += 1;
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let c1 = S::of(1.0 - cfg.beta1.powi(state.t as i32));
    let c2 = S::of(1.0 - cfg.beta2.powi(state.t as i32));
    let (lr, eps) = (S::of(cfg.learning_rate), S::of(cfg.eps));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (S::one() - b1) * g;
        *v = b2 * *v + (S::one() - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p = *p - lr * mhat / (vhat.sqrt() + eps);
    }
}
