//! The placement MDP: sequence states, swap transitions, best-so-far rewards
//! and rollouts under any action-distribution provider.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::policy::{sample_action, ActionProbs, Variant};
use crate::seed;
use crate::spatial::ProblemInstance;

/// A solution: a permutation of pool indices whose first `n` entries hold
/// sensors and whose remaining `m` entries are free candidates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlacementState {
    order: Vec<usize>,
    n: usize,
}

impl PlacementState {
    pub fn new(order: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return domain(format!("state {order:?} is not a permutation of 0..{}", order.len()));
            }
        }
        if n == 0 || n >= order.len() {
            return domain(format!("state needs 1 <= n < {} (got n = {n})", order.len()));
        }
        Ok(Self { order, n })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Pool indices currently holding sensors.
    pub fn placed(&self) -> &[usize] {
        &self.order[..self.n]
    }

    pub fn candidates(&self) -> &[usize] {
        &self.order[self.n..]
    }

    pub fn is_placed_position(&self, pos: usize) -> bool {
        pos < self.n
    }

    pub(crate) fn swap_in_place(&mut self, action: MoveAction) {
        self.order.swap(action.a, action.b);
    }
}

/// Exchange of the entries at two sequence positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MoveAction {
    pub a: usize,
    pub b: usize,
}

impl MoveAction {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return domain(format!("move action needs distinct positions (got {a}, {b})"));
        }
        Ok(Self { a, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    /// Steps per episode, `T`.
    pub horizon: usize,
    pub discount: f64,
    /// Multiplier on rewards handed to the learner.
    pub reward_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 200,
            discount: 0.99,
            reward_scale: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return domain("horizon must be at least 1");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return domain(format!("discount must lie in (0, 1], got {}", self.discount));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return domain(format!("reward_scale must be positive, got {}", self.reward_scale));
        }
        Ok(())
    }
}

/// Uniformly random permutation of the instance's pool.
pub fn initial_state(instance: &ProblemInstance, rng_seed: u64) -> PlacementState {
    let mut order: Vec<usize> = (0..instance.len()).collect();
    order.shuffle(&mut seed::rng(rng_seed));
    PlacementState { order, n: instance.n() }
}

/// The deterministic transition: a copy of `state` with positions `a` and `b`
/// exchanged.
pub fn apply_action(state: &PlacementState, action: MoveAction) -> Result<PlacementState> {
    if action.a == action.b {
        return domain("move action needs distinct positions");
    }
    if action.a >= state.len() || action.b >= state.len() {
        return domain(format!(
            "move ({}, {}) out of range for a state of length {}",
            action.a,
            action.b,
            state.len()
        ));
    }
    let mut next = state.clone();
    next.swap_in_place(action);
    Ok(next)
}

/// MAE of the network encoded by `state`.
pub fn state_mae(instance: &ProblemInstance, state: &PlacementState) -> f64 {
    instance.score_unchecked(state.placed())
}

/// Reward for reaching a state with error `next_mae` when the best error so
/// far is `best`: the improvement of the running minimum.
#[inline]
pub fn reward_from_mae(best: f64, next_mae: f64) -> (f64, f64) {
    let new_best = best.min(next_mae);
    (best - new_best, new_best)
}

/// Best-so-far reward for moving into `next_state`; returns the reward and the
/// updated best MAE.
pub fn step_reward(instance: &ProblemInstance, best_mae_so_far: f64, next_state: &PlacementState) -> (f64, f64) {
    reward_from_mae(best_mae_so_far, state_mae(instance, next_state))
}

/// Anything that maps a state to a distribution over ordered position pairs.
pub trait ActionPolicy {
    fn action_probs(&self, instance: &ProblemInstance, state: &PlacementState) -> Result<ActionProbs>;

    /// Critic estimate for the state, when the provider has one.
    fn value_estimate(&self, _instance: &ProblemInstance, _state: &PlacementState) -> Result<f64> {
        Ok(0.0)
    }
}

/// Uniform distribution over the pairs a variant allows.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub variant: Variant,
}

impl ActionPolicy for UniformPolicy {
    fn action_probs(&self, _instance: &ProblemInstance, state: &PlacementState) -> Result<ActionProbs> {
        let len = state.len();
        let n = state.n();
        let allowed = |a: usize, b: usize| self.variant.allows(a, b, n);
        let count = (0..len)
            .flat_map(|a| (0..len).map(move |b| (a, b)))
            .filter(|&(a, b)| allowed(a, b))
            .count();
        let p = 1.0 / count as f64;
        let mut probs = vec![0.0; len * len];
        for a in 0..len {
            for b in 0..len {
                if allowed(a, b) {
                    probs[a * len + b] = p;
                }
            }
        }
        ActionProbs::new(len, probs)
    }
}

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// State the action was taken in.
    pub state: PlacementState,
    pub action: MoveAction,
    /// Unscaled best-so-far reward.
    pub reward: f64,
    /// Reward as fed to the learner (`reward * reward_scale`).
    pub scaled_reward: f64,
    pub value_estimate: f64,
    pub log_prob: f64,
    /// MAE of the state after the action.
    pub mae: f64,
    /// Best MAE after the action.
    pub best_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub initial_mae: f64,
    pub steps: Vec<TraceStep>,
    pub best_mae: f64,
    pub best_state: PlacementState,
    pub final_state: PlacementState,
}

impl EpisodeTrace {
    /// Mean MAE over every visited state, the initial one included.
    pub fn mean_mae(&self) -> f64 {
        let total: f64 = self.initial_mae + self.steps.iter().map(|s| s.mae).sum::<f64>();
        total / (self.steps.len() + 1) as f64
    }

    pub fn records(&self) -> Vec<StepRecord> {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, s)| StepRecord {
                step: t + 1,
                action: s.action,
                reward: s.reward,
                mae: s.mae,
                best_mae: s.best_mae,
            })
            .collect()
    }
}

/// A row of the trace dump shared by rollouts and the search baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub action: MoveAction,
    pub reward: f64,
    pub mae: f64,
    pub best_mae: f64,
}

pub fn format_trace(initial_mae: f64, records: &[StepRecord]) -> String {
    let mut s = String::new();
    writeln!(s, "# initial_mae={initial_mae}").unwrap();
    writeln!(s, "step,a,b,reward,mae,best_mae").unwrap();
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step, r.action.a, r.action.b, r.reward, r.mae, r.best_mae
        )
        .unwrap();
    }
    s
}

/// Runs `config.horizon` steps from `initial`, sampling actions from `policy`.
pub fn rollout_from(
    instance: &ProblemInstance,
    policy: &impl ActionPolicy,
    config: &EnvConfig,
    initial: PlacementState,
    rng: &mut impl Rng,
) -> Result<EpisodeTrace> {
    config.validate()?;
    if initial.len() != instance.len() || initial.n() != instance.n() {
        return domain("initial state does not match the instance dimensions");
    }
    let initial_mae = state_mae(instance, &initial);
    let mut best = initial_mae;
    let mut best_state = initial.clone();
    let mut state = initial;
    let mut steps = Vec::with_capacity(config.horizon);
    for _ in 0..config.horizon {
        let probs = policy.action_probs(instance, &state)?;
        let value = policy.value_estimate(instance, &state)?;
        let (action, log_prob) = sample_action(&probs, rng)
            .map_err(|e| Error::Runtime(format!("policy emitted an invalid distribution: {e}")))?;
        let mut next = state.clone();
        next.swap_in_place(action);
        let mae = state_mae(instance, &next);
        let (reward, new_best) = reward_from_mae(best, mae);
        if new_best < best {
            best_state = next.clone();
        }
        best = new_best;
        steps.push(TraceStep {
            state: std::mem::replace(&mut state, next),
            action,
            reward,
            scaled_reward: reward * config.reward_scale,
            value_estimate: value,
            log_prob,
            mae,
            best_mae: best,
        });
    }
    Ok(EpisodeTrace {
        initial_mae,
        steps,
        best_mae: best,
        best_state,
        final_state: state,
    })
}

pub fn rollout(
    instance: &ProblemInstance,
    policy: &impl ActionPolicy,
    config: &EnvConfig,
    rng_seed: u64,
) -> Result<EpisodeTrace> {
    let initial = initial_state(instance, seed::derive(rng_seed, "initial", &[]));
    let mut rng = seed::rng(seed::derive(rng_seed, "actions", &[]));
    rollout_from(instance, policy, config, initial, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{score_network, Location, SensorReading};
    use proptest::prelude::*;
    use rand::Rng;

    fn grid_instance(n: usize, m: usize, seed_val: u64) -> ProblemInstance {
        let mut rng = seed::rng(seed_val);
        let locs: Vec<Location> = (0..n + m)
            .map(|i| Location::new(i as f64 + rng.gen_range(0.0..0.5), rng.gen_range(0.0..3.0)))
            .collect();
        let truth = (0..n + m).map(|_| rng.gen_range(0.0..10.0)).collect();
        let eval = (0..4)
            .map(|_| {
                SensorReading::new(
                    Location::new(rng.gen_range(0.0..(n + m) as f64) + 0.25, rng.gen_range(3.5..4.0)),
                    rng.gen_range(0.0..10.0),
                )
            })
            .collect();
        ProblemInstance::new(locs, truth, eval, n).unwrap()
    }

    #[test]
    fn swap_matches_figure_example() {
        // [p1,p2,p3 | p4,p5] with action (1,3) moves the sensor at p2 to p4.
        let s = PlacementState::new(vec![0, 1, 2, 3, 4], 3).unwrap();
        let next = apply_action(&s, MoveAction::new(1, 3).unwrap()).unwrap();
        assert_eq!(next.order(), &[0, 3, 2, 1, 4]);
        assert_eq!(s.order(), &[0, 1, 2, 3, 4]);
        let back = apply_action(&next, MoveAction::new(1, 3).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn invalid_actions_rejected() {
        assert!(MoveAction::new(2, 2).is_err());
        let s = PlacementState::new(vec![0, 1, 2], 1).unwrap();
        assert!(apply_action(&s, MoveAction { a: 1, b: 1 }).is_err());
        assert!(apply_action(&s, MoveAction { a: 0, b: 3 }).is_err());
    }

    #[test]
    fn state_validation() {
        assert!(PlacementState::new(vec![0, 0, 1], 1).is_err());
        assert!(PlacementState::new(vec![0, 3, 1], 1).is_err());
        assert!(PlacementState::new(vec![0, 1], 0).is_err());
        assert!(PlacementState::new(vec![0, 1], 2).is_err());
    }

    #[test]
    fn swapping_two_placed_keeps_score() {
        let inst = grid_instance(3, 2, 5);
        let s = initial_state(&inst, 9);
        let t = apply_action(&s, MoveAction::new(0, 1).unwrap()).unwrap();
        assert_eq!(
            score_network(&inst, s.placed()).unwrap(),
            score_network(&inst, t.placed()).unwrap()
        );
    }

    #[test]
    fn initial_state_small_and_deterministic() {
        let inst = grid_instance(1, 1, 1);
        for seed_val in 0..20 {
            let s = initial_state(&inst, seed_val);
            assert!(s.order() == [0, 1] || s.order() == [1, 0]);
            assert_eq!(s, initial_state(&inst, seed_val));
        }
    }

    #[test]
    fn initial_state_is_uniform_in_first_position() {
        let inst = grid_instance(2, 2, 3);
        let mut counts = [0usize; 4];
        let trials = 10_000;
        for s in 0..trials {
            counts[initial_state(&inst, s).order()[0]] += 1;
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.25).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn step_reward_cases() {
        assert_eq!(reward_from_mae(2.0, 1.5), (0.5, 1.5));
        assert_eq!(reward_from_mae(2.0, 2.5), (0.0, 2.0));
    }

    #[test]
    fn single_step_without_improvement_keeps_initial_best() {
        // Swapping two placed positions cannot change the MAE.
        struct Fixed;
        impl ActionPolicy for Fixed {
            fn action_probs(&self, _: &ProblemInstance, s: &PlacementState) -> Result<ActionProbs> {
                let len = s.len();
                let mut p = vec![0.0; len * len];
                p[1] = 1.0;
                ActionProbs::new(len, p)
            }
        }
        let inst = grid_instance(2, 3, 7);
        let cfg = EnvConfig {
            horizon: 1,
            ..EnvConfig::default()
        };
        let trace = rollout(&inst, &Fixed, &cfg, 4).unwrap();
        assert_eq!(trace.best_mae, trace.initial_mae);
        assert_eq!(trace.steps[0].reward, 0.0);
        assert_eq!(trace.steps[0].log_prob, 0.0);
    }

    #[test]
    fn rollout_rejects_bad_distributions() {
        struct Broken;
        impl ActionPolicy for Broken {
            fn action_probs(&self, _: &ProblemInstance, s: &PlacementState) -> Result<ActionProbs> {
                Ok(ActionProbs::new_unchecked(s.len(), vec![0.5; s.len() * s.len()]))
            }
        }
        let inst = grid_instance(2, 2, 1);
        let cfg = EnvConfig {
            horizon: 3,
            ..EnvConfig::default()
        };
        assert!(matches!(rollout(&inst, &Broken, &cfg, 1), Err(Error::Runtime(_))));
    }

    #[test]
    fn trace_dump_has_header_and_rows() {
        let inst = grid_instance(2, 3, 2);
        let cfg = EnvConfig {
            horizon: 5,
            ..EnvConfig::default()
        };
        let trace = rollout(
            &inst,
            &UniformPolicy {
                variant: Variant::MaskSwap,
            },
            &cfg,
            3,
        )
        .unwrap();
        let text = format_trace(trace.initial_mae, &trace.records());
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[1], "step,a,b,reward,mae,best_mae");
        assert_eq!(lines.len(), 2 + 5);
        assert_eq!(lines[2].split(',').count(), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn rollout_invariants(inst_seed in 0u64..500, run_seed in 0u64..500, n in 1usize..4, m in 1usize..4, mask in any::<bool>()) {
            let inst = grid_instance(n, m, inst_seed);
            let variant = if mask { Variant::MaskSwap } else { Variant::Swap };
            let cfg = EnvConfig { horizon: 25, ..EnvConfig::default() };
            let trace = rollout(&inst, &UniformPolicy { variant }, &cfg, run_seed).unwrap();
            let mut prev_best = trace.initial_mae;
            let mut sum = 0.0;
            for s in &trace.steps {
                let mut sorted = s.state.order().to_vec();
                sorted.sort_unstable();
                prop_assert_eq!(sorted, (0..inst.len()).collect::<Vec<_>>());
                prop_assert!(s.reward >= 0.0);
                prop_assert!(s.best_mae <= prev_best);
                prop_assert_eq!(s.scaled_reward, s.reward * cfg.reward_scale);
                prev_best = s.best_mae;
                sum += s.reward;
            }
            prop_assert!((sum - (trace.initial_mae - trace.best_mae)).abs() < 1e-12);
            prop_assert_eq!(state_mae(&inst, &trace.best_state), trace.best_mae);
        }

        #[test]
        fn apply_action_is_an_involution(seed_val in 0u64..1000, a in 0usize..6, b in 0usize..6) {
            prop_assume!(a != b);
            let inst = grid_instance(2, 4, 1);
            let s = initial_state(&inst, seed_val);
            let act = MoveAction::new(a, b).unwrap();
            let twice = apply_action(&apply_action(&s, act).unwrap(), act).unwrap();
            prop_assert_eq!(twice, s);
        }
    }
}
