//! One synchronized batch of rollouts with an update every `T_n` steps.

use rand_chacha::ChaCha8Rng;

use super::adam::{clip_norm, Adam};
use super::targets::capped_targets;
use super::TrainConfig;
use crate::env::{initial_state, reward_from_mae, state_mae, MoveAction, PlacementState};
use crate::error::{domain, Error, Result};
use crate::par::{collect_ordered, Workers};
use crate::policy::network::{accumulate_log_prob_grad, forward, ForwardPass};
use crate::policy::{
    accumulate_value_grad, critic_forward, sample_action, CriticParameters, ParamTensors, PolicyParameters,
    TransformerPolicy,
};
use crate::seed;
use crate::spatial::ProblemInstance;

/// Global-norm bound applied to each network's averaged gradient.
pub const GRAD_CLIP: f64 = 1.0;

/// Slots per gradient partial sum. Fixed so the reduction order does not
/// depend on the worker count.
const CHUNK: usize = 8;

/// Policy plus optimizer state and the current learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub policy: TransformerPolicy,
    pub actor_opt: Adam<PolicyParameters>,
    pub critic_opt: Adam<CriticParameters>,
    pub lr_actor: f64,
    pub lr_critic: f64,
}

impl Learner {
    pub fn new(policy: TransformerPolicy, lr_actor: f64, lr_critic: f64) -> Self {
        Self {
            actor_opt: Adam::new(&policy.actor),
            critic_opt: Adam::new(&policy.critic),
            policy,
            lr_actor,
            lr_critic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub episodes: usize,
    pub updates: usize,
    /// Mean unscaled episode return (initial minus best MAE).
    pub mean_reward: f64,
    /// Mean MAE over all visited states, initial states included.
    pub mean_mae: f64,
    pub mean_best_mae: f64,
    /// Mean pre-clipping norm of the averaged actor gradient.
    pub mean_actor_grad_norm: f64,
}

struct Slot<'a> {
    instance: &'a ProblemInstance,
    state: PlacementState,
    rng: ChaCha8Rng,
    initial_mae: f64,
    best: f64,
    mae_sum: f64,
}

/// Summed (unaveraged) gradients of a group of slots for one segment.
struct Partial {
    actor: PolicyParameters,
    critic: CriticParameters,
}

fn run_segment(slot: &mut Slot<'_>, learner: &Learner, config: &TrainConfig, acc: &mut Partial) -> Result<()> {
    let net = &learner.policy.config;
    let actor = &learner.policy.actor;
    let critic = &learner.policy.critic;
    let len = config.update_interval;
    let mut passes: Vec<(ForwardPass, MoveAction)> = Vec::with_capacity(len);
    let mut critic_passes = Vec::with_capacity(len + 1);
    let mut rewards = Vec::with_capacity(len);
    for _ in 0..len {
        critic_passes.push(critic_forward(&slot.state, slot.instance, critic)?);
        let pass = forward(&slot.state, slot.instance, actor, net)?;
        let (action, _) = sample_action(pass.probs(), &mut slot.rng)
            .map_err(|e| Error::Runtime(format!("policy emitted an invalid distribution: {e}")))?;
        slot.state.swap_in_place(action);
        let mae = state_mae(slot.instance, &slot.state);
        let (reward, best) = reward_from_mae(slot.best, mae);
        slot.best = best;
        slot.mae_sum += mae;
        rewards.push(reward * config.reward_scale);
        passes.push((pass, action));
    }
    critic_passes.push(critic_forward(&slot.state, slot.instance, critic)?);
    let values: Vec<f64> = critic_passes.iter().map(|p| p.value()).collect();
    let targets = capped_targets(&rewards, &values, config.n_step, config.discount);
    for (k, (pass, action)) in passes.iter().enumerate() {
        let delta = targets[k] - values[k];
        accumulate_log_prob_grad(pass, *action, delta, actor, net, &mut acc.actor);
        accumulate_value_grad(&critic_passes[k], -delta, critic, &mut acc.critic);
    }
    Ok(())
}

/// Seed of slot `index` in a batch seeded with `batch_seed`.
pub fn slot_seed(batch_seed: u64, index: usize) -> u64 {
    seed::derive(batch_seed, "slot", &[index as u64])
}

/// Runs `config.horizon` steps on every instance of the batch, updating the
/// learner after each complete segment of `config.update_interval` steps.
/// Trailing steps that do not fill a segment are not taken.
pub fn train_batch(
    instances: &[ProblemInstance],
    learner: &mut Learner,
    config: &TrainConfig,
    batch_seed: u64,
    workers: &Workers,
) -> Result<BatchStats> {
    let seeds: Vec<u64> = (0..instances.len()).map(|i| slot_seed(batch_seed, i)).collect();
    train_batch_seeded(instances, &seeds, learner, config, workers)
}

/// [`train_batch`] with an explicit seed per slot. A slot's initial state and
/// action stream depend only on its seed.
pub fn train_batch_seeded(
    instances: &[ProblemInstance],
    slot_seeds: &[u64],
    learner: &mut Learner,
    config: &TrainConfig,
    workers: &Workers,
) -> Result<BatchStats> {
    config.validate()?;
    let Some(first) = instances.first() else {
        return domain("empty batch");
    };
    if instances.iter().any(|i| i.n() != first.n() || i.m() != first.m()) {
        return domain("all instances of a batch must share n and m");
    }
    if slot_seeds.len() != instances.len() {
        return domain(format!("{} seeds for {} instances", slot_seeds.len(), instances.len()));
    }
    let mut slots: Vec<Slot<'_>> = instances
        .iter()
        .zip(slot_seeds)
        .map(|(instance, &s)| {
            let state = initial_state(instance, seed::derive(s, "initial", &[]));
            let mae = state_mae(instance, &state);
            Slot {
                instance,
                state,
                rng: seed::rng(seed::derive(s, "actions", &[])),
                initial_mae: mae,
                best: mae,
                mae_sum: mae,
            }
        })
        .collect();

    let segments = config.horizon / config.update_interval;
    let denom = (instances.len() * config.update_interval) as f64;
    let mut norm_sum = 0.0;
    for segment in 0..segments {
        let partials = {
            let learner = &*learner;
            let mut chunks: Vec<&mut [Slot<'_>]> = slots.chunks_mut(CHUNK).collect();
            workers.map_mut(&mut chunks, |_, chunk| {
                let mut acc = Partial {
                    actor: learner.policy.actor.zeros_like(),
                    critic: learner.policy.critic.zeros_like(),
                };
                for slot in chunk.iter_mut() {
                    run_segment(slot, learner, config, &mut acc)?;
                }
                Ok(acc)
            })
        };
        let mut partials = collect_ordered(partials)?.into_iter();
        let mut total = partials.next().expect("at least one chunk");
        for p in partials {
            total.actor.add_scaled(&p.actor, 1.0);
            total.critic.add_scaled(&p.critic, 1.0);
        }
        // Ascent on the actor objective is descent on its negation.
        total.actor.scale(-1.0 / denom);
        total.critic.scale(1.0 / denom);
        if let Some(name) = total
            .actor
            .first_non_finite()
            .or_else(|| total.critic.first_non_finite())
        {
            return Err(Error::Runtime(format!(
                "non-finite gradient in `{name}` at segment {} of {segments}",
                segment + 1
            )));
        }
        norm_sum += clip_norm(&mut total.actor, GRAD_CLIP);
        clip_norm(&mut total.critic, GRAD_CLIP);
        let Learner {
            policy,
            actor_opt,
            critic_opt,
            lr_actor,
            lr_critic,
        } = learner;
        actor_opt.descend(&mut policy.actor, &total.actor, *lr_actor);
        critic_opt.descend(&mut policy.critic, &total.critic, *lr_critic);
    }

    let k = slots.len() as f64;
    let visited = (segments * config.update_interval + 1) as f64;
    Ok(BatchStats {
        episodes: slots.len(),
        updates: segments,
        mean_reward: slots.iter().map(|s| s.initial_mae - s.best).sum::<f64>() / k,
        mean_mae: slots.iter().map(|s| s.mae_sum / visited).sum::<f64>() / k,
        mean_best_mae: slots.iter().map(|s| s.best).sum::<f64>() / k,
        mean_actor_grad_norm: if segments > 0 { norm_sum / segments as f64 } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{critic_forward, NetConfig, Variant};
    use crate::spatial::{Location, SensorReading};

    fn instance(seed_val: u64) -> ProblemInstance {
        use rand::Rng;
        let mut rng = seed::rng(seed_val);
        let locs: Vec<Location> = (0..5)
            .map(|_| Location::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
            .collect();
        let truth = locs.iter().map(|l| (3.0 * l.x).sin() + l.y).collect();
        let evals = (0..4)
            .map(|_| {
                let l = Location::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                SensorReading::new(l, (3.0 * l.x).sin() + l.y)
            })
            .collect();
        ProblemInstance::new(locs, truth, evals, 2).unwrap()
    }

    fn net() -> NetConfig {
        NetConfig {
            d_h: 4,
            d_ff: 6,
            layers: 1,
            clip: 10.0,
            variant: Variant::Swap,
        }
    }

    fn tiny_config(horizon: usize, interval: usize) -> TrainConfig {
        TrainConfig {
            horizon,
            update_interval: interval,
            n_step: interval,
            lr_actor: 1e-2,
            lr_critic: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_step_update_matches_the_gradient_formulas() {
        let inst = instance(4);
        let config = tiny_config(1, 1);
        let policy = TransformerPolicy::init(net(), 9).unwrap();
        let mut learner = Learner::new(policy.clone(), config.lr_actor, config.lr_critic);
        let stats = train_batch(
            std::slice::from_ref(&inst),
            &mut learner,
            &config,
            77,
            &Workers::sequential(),
        )
        .unwrap();
        assert_eq!(stats.updates, 1);

        // Replay the single transition by hand.
        let slot = slot_seed(77, 0);
        let s0 = initial_state(&inst, seed::derive(slot, "initial", &[]));
        let mut rng = seed::rng(seed::derive(slot, "actions", &[]));
        let pass = forward(&s0, &inst, &policy.actor, &policy.config).unwrap();
        let (action, _) = sample_action(pass.probs(), &mut rng).unwrap();
        let mut s1 = s0.clone();
        s1.swap_in_place(action);
        let (reward, _) = reward_from_mae(state_mae(&inst, &s0), state_mae(&inst, &s1));
        let v0 = critic_forward(&s0, &inst, &policy.critic).unwrap();
        let v1 = critic_forward(&s1, &inst, &policy.critic).unwrap().value();
        let delta = reward * config.reward_scale + config.discount * v1 - v0.value();

        let mut ga = policy.actor.zeros_like();
        accumulate_log_prob_grad(&pass, action, delta, &policy.actor, &policy.config, &mut ga);
        ga.scale(-1.0);
        let mut gc = policy.critic.zeros_like();
        accumulate_value_grad(&v0, -delta, &policy.critic, &mut gc);
        clip_norm(&mut ga, GRAD_CLIP);
        clip_norm(&mut gc, GRAD_CLIP);
        let mut expected = policy.clone();
        Adam::new(&expected.actor).descend(&mut expected.actor, &ga, config.lr_actor);
        Adam::new(&expected.critic).descend(&mut expected.critic, &gc, config.lr_critic);
        assert_eq!(learner.policy, expected);
    }

    #[test]
    fn zero_learning_signal_leaves_actor_unchanged() {
        // Identical truth everywhere: every MAE is zero, so rewards vanish,
        // and a zero critic makes every advantage zero.
        let locs: Vec<Location> = (0..5)
            .map(|i| Location::new(i as f64 * 0.2, (i * i) as f64 * 0.1))
            .collect();
        let evals = vec![SensorReading::new(Location::new(0.5, 0.5), 1.0)];
        let inst = ProblemInstance::new(locs, vec![1.0; 5], evals, 2).unwrap();
        let mut policy = TransformerPolicy::init(net(), 1).unwrap();
        policy.critic.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        let mut learner = Learner::new(policy.clone(), 1e-2, 1e-2);
        train_batch(&[inst], &mut learner, &tiny_config(8, 4), 3, &Workers::sequential()).unwrap();
        assert_eq!(learner.policy.actor, policy.actor);
    }

    #[test]
    fn duplicated_batch_gives_the_same_update() {
        let inst = instance(5);
        let config = tiny_config(4, 4);
        let policy = TransformerPolicy::init(net(), 2).unwrap();
        // Duplicated slots share their seed, hence their whole trajectory.
        let mut single = Learner::new(policy.clone(), 1e-2, 1e-2);
        train_batch(
            std::slice::from_ref(&inst),
            &mut single,
            &config,
            11,
            &Workers::sequential(),
        )
        .unwrap();

        let mut doubled = Learner::new(policy.clone(), 1e-2, 1e-2);
        let seed0 = slot_seed(11, 0);
        let pair = [inst.clone(), inst.clone()];
        train_batch_seeded(&pair, &[seed0, seed0], &mut doubled, &config, &Workers::sequential()).unwrap();
        for ((name, a), (_, b)) in single
            .policy
            .actor
            .tensors()
            .into_iter()
            .zip(doubled.policy.actor.tensors())
        {
            let diff = (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12, "{name}: {diff}");
        }
    }

    #[test]
    fn worker_count_does_not_change_the_result() {
        let instances: Vec<_> = (0..11).map(instance).collect();
        let config = tiny_config(8, 4);
        let policy = TransformerPolicy::init(net(), 6).unwrap();
        let mut a = Learner::new(policy.clone(), 1e-3, 1e-3);
        let mut b = Learner::new(policy, 1e-3, 1e-3);
        let sa = train_batch(&instances, &mut a, &config, 5, &Workers::sequential()).unwrap();
        let sb = train_batch(&instances, &mut b, &config, 5, &Workers::new(3).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn trailing_partial_segment_is_discarded() {
        let inst = instance(8);
        let stats = train_batch(
            &[inst],
            &mut Learner::new(TransformerPolicy::init(net(), 1).unwrap(), 1e-3, 1e-3),
            &tiny_config(10, 4),
            1,
            &Workers::sequential(),
        )
        .unwrap();
        assert_eq!(stats.updates, 2);
    }
}
