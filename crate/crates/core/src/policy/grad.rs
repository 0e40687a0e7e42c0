//! Segment-level gradients used by the trainer.

use super::critic::{accumulate_value_grad, critic_forward};
use super::network::{accumulate_log_prob_grad, forward};
use super::params::{CriticParameters, ParamTensors, PolicyParameters};
use super::NetConfig;
use crate::env::{MoveAction, PlacementState};
use crate::error::{domain, Result};
use crate::spatial::ProblemInstance;

/// `sum_t advantage_t * grad log pi(action_t | state_t)`.
pub fn actor_grad(
    instance: &ProblemInstance,
    segment: &[(PlacementState, MoveAction)],
    advantages: &[f64],
    params: &PolicyParameters,
    config: &NetConfig,
) -> Result<PolicyParameters> {
    if segment.len() != advantages.len() {
        return domain(format!(
            "{} advantages for a segment of {} steps",
            advantages.len(),
            segment.len()
        ));
    }
    let mut grad = params.zeros_like();
    for ((state, action), &adv) in segment.iter().zip(advantages) {
        if adv == 0.0 {
            continue;
        }
        let pass = forward(state, instance, params, config)?;
        accumulate_log_prob_grad(&pass, *action, adv, params, config, &mut grad);
    }
    Ok(grad)
}

/// Gradient of `0.5 * sum_t (target_t - V(state_t))^2`.
pub fn critic_grad(
    instance: &ProblemInstance,
    states: &[PlacementState],
    targets: &[f64],
    critic: &CriticParameters,
) -> Result<CriticParameters> {
    if states.len() != targets.len() {
        return domain(format!("{} targets for {} states", targets.len(), states.len()));
    }
    let mut grad = critic.zeros_like();
    for (state, &target) in states.iter().zip(targets) {
        let pass = critic_forward(state, instance, critic)?;
        let delta = target - pass.value();
        accumulate_value_grad(&pass, -delta, critic, &mut grad);
    }
    Ok(grad)
}
