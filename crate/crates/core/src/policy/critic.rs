//! State-value critic. The location embedding is mean-pooled over the whole
//! pool, so the estimate depends on the instance's locations but not on the
//! order of the sequence.

use ndarray::linalg::general_mat_mul;
use ndarray::Array2;

use super::params::CriticParameters;
use crate::env::PlacementState;
use crate::error::{Error, Result};
use crate::spatial::ProblemInstance;

pub struct CriticPass {
    mean_coords: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    value: f64,
}

impl CriticPass {
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Smallest `|pre-activation|` of the hidden ReLU layer.
    pub fn relu_margin(&self) -> f64 {
        self.hidden_pre.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

pub fn critic_forward(
    state: &PlacementState,
    instance: &ProblemInstance,
    critic: &CriticParameters,
) -> Result<CriticPass> {
    debug_assert_eq!(state.len(), instance.len());
    // The mean of linear embeddings is the embedding of the mean coordinate.
    // Pool order keeps the sum bit-identical under any permutation.
    let locs = instance.locations();
    let k = locs.len() as f64;
    let (sx, sy) = locs.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let mean_coords = Array2::from_shape_vec((1, 2), vec![sx / k, sy / k]).expect("1x2");
    let pooled = mean_coords.dot(&critic.embed_w) + &critic.embed_b;
    let hidden_pre = pooled.dot(&critic.hidden_w) + &critic.hidden_b;
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let value = hidden.dot(&critic.out_w)[[0, 0]] + critic.out_b[[0, 0]];
    if !value.is_finite() {
        return Err(Error::Runtime(format!("critic produced a non-finite value ({value})")));
    }
    Ok(CriticPass {
        mean_coords,
        hidden_pre,
        hidden,
        value,
    })
}

pub fn value_estimate(state: &PlacementState, instance: &ProblemInstance, critic: &CriticParameters) -> Result<f64> {
    Ok(critic_forward(state, instance, critic)?.value)
}

/// `grad += coeff * dV / d params`.
pub fn accumulate_value_grad(pass: &CriticPass, coeff: f64, critic: &CriticParameters, grad: &mut CriticParameters) {
    if coeff == 0.0 {
        return;
    }
    grad.out_w.scaled_add(coeff, &pass.hidden.t());
    grad.out_b[[0, 0]] += coeff;
    let mut dpre = critic.out_w.t().to_owned() * coeff;
    for (d, &p) in dpre.iter_mut().zip(pass.hidden_pre.iter()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    let pooled = pass.mean_coords.dot(&critic.embed_w) + &critic.embed_b;
    general_mat_mul(1.0, &pooled.t(), &dpre, 1.0, &mut grad.hidden_w);
    grad.hidden_b += &dpre;
    let dpooled = dpre.dot(&critic.hidden_w.t());
    general_mat_mul(1.0, &pass.mean_coords.t(), &dpooled, 1.0, &mut grad.embed_w);
    grad.embed_b += &dpooled;
}
