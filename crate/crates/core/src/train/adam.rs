//! Adaptive-moment optimizer over a parameter set.

use crate::policy::ParamTensors;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<P> {
    pub first: P,
    pub second: P,
    /// Steps taken so far.
    pub step: u64,
}

impl<P: ParamTensors> Adam<P> {
    pub fn new(like: &P) -> Self {
        Self {
            first: like.zeros_like(),
            second: like.zeros_like(),
            step: 0,
        }
    }

    /// One descent step along `grad` with base rate `lr`.
    pub fn descend(&mut self, params: &mut P, grad: &P, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let grads = grad.tensors();
        let params = params.tensors_mut();
        let firsts = self.first.tensors_mut();
        let seconds = self.second.tensors_mut();
        for (((p, (_, g)), m), v) in params.into_iter().zip(grads).zip(firsts).zip(seconds) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            });
        }
    }
}

/// Rescales `grad` so its global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_norm<P: ParamTensors>(grad: &mut P, max_norm: f64) -> f64 {
    let norm = grad.norm();
    if norm > max_norm {
        grad.scale(max_norm / norm);
    }
    norm
}
