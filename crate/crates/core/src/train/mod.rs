//! Continuous n-step actor-critic training.
//!
//! Each epoch draws fresh instances, splits them into `batch_count` batches
//! and runs [`train_batch`] on each. Every segment of `update_interval` steps
//! ends with one averaged update of both networks. After the epoch both
//! learning rates decay and the policy is scored on a fixed probe set.
//!
//! All randomness is derived from `rng_seed`, the epoch and the batch index,
//! so a run resumed from a checkpoint continues exactly as an uninterrupted
//! one would.

mod adam;
mod batch;
mod targets;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

pub use adam::{clip_norm, Adam, ADAM_EPS, BETA1, BETA2};
pub use batch::{slot_seed, train_batch, train_batch_seeded, BatchStats, Learner, GRAD_CLIP};
pub use targets::{capped_targets, n_step_targets};

use crate::checkpoint::{get_net_config, policy_checkpoint, policy_from_checkpoint, Checkpoint};
use crate::config::train_entries;
use crate::error::{domain, Error, Result};
use crate::evaluation::{evaluate_policy, InstanceResult};
use crate::par::{collect_ordered, Workers};
use crate::policy::{NetConfig, TransformerPolicy};
use crate::seed;
use crate::spatial::{generate_instance, FieldModel, Polygon, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Instances generated per epoch, `M`.
    pub instances_per_epoch: usize,
    pub batch_count: usize,
    /// Steps per episode, `T`.
    pub horizon: usize,
    /// Steps between updates, `T_n`.
    pub update_interval: usize,
    pub discount: f64,
    /// Lookahead of the return targets, capped at the segment end.
    pub n_step: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_decay: f64,
    pub reward_scale: f64,
    pub rng_seed: u64,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    /// Held-out instances scored after every epoch.
    pub probe_size: usize,
    /// Threads for rollouts; 0 or 1 runs on the calling thread. Results do
    /// not depend on this value.
    pub workers: usize,
    /// Start from a zeroed decoder, i.e. a uniform action distribution.
    pub zero_decoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            instances_per_epoch: 5120,
            batch_count: 10,
            horizon: 200,
            update_interval: 4,
            discount: 0.99,
            n_step: 4,
            lr_actor: 1e-4,
            lr_critic: 1e-4,
            lr_decay: 0.99,
            reward_scale: 10.0,
            rng_seed: 0,
            n: 60,
            m: 145,
            q: 52,
            probe_size: 100,
            workers: 1,
            zero_decoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.update_interval == 0 || self.update_interval > self.horizon {
            return domain(format!(
                "update_interval must lie in 1..=horizon ({}), got {}",
                self.horizon, self.update_interval
            ));
        }
        if self.n_step == 0 {
            return domain("n_step must be at least 1");
        }
        if self.instances_per_epoch == 0 || self.batch_count == 0 || self.batch_count > self.instances_per_epoch {
            return domain(format!(
                "need 1 <= batch_count ({}) <= instances_per_epoch ({})",
                self.batch_count, self.instances_per_epoch
            ));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return domain(format!("discount must lie in [0, 1], got {}", self.discount));
        }
        for (name, lr) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return domain(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return domain(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return domain(format!("reward_scale must be positive, got {}", self.reward_scale));
        }
        if self.n == 0 || self.m == 0 || self.q == 0 {
            return domain("n, m and q must all be at least 1");
        }
        if self.probe_size == 0 {
            return domain("probe_size must be at least 1");
        }
        Ok(())
    }

    /// Actor and critic rates in effect during epoch `k` (0-based).
    pub fn learning_rates(&self, k: usize) -> (f64, f64) {
        let f = self.lr_decay.powi(k as i32);
        (self.lr_actor * f, self.lr_critic * f)
    }
}

/// Probe-set scores after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based index of the completed epoch.
    pub epoch: usize,
    /// Mean unscaled episode return.
    pub mean_reward: f64,
    pub mean_mae: f64,
    pub mean_best_mae: f64,
    /// Actor learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Seconds spent in this invocation; not part of the CSV.
    pub wall_clock_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

pub const REPORT_HEADER: &str = "epoch,mean_reward,mean_mae,mean_best_mae,lr";

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.records {
            writeln!(s, "{}", record_fields(r)).unwrap();
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        if lines.next().map(str::trim) != Some(REPORT_HEADER) {
            return domain(format!("expected header `{REPORT_HEADER}`"));
        }
        lines.map(parse_record).collect()
    }
}

fn record_fields(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{}",
        r.epoch, r.mean_reward, r.mean_mae, r.mean_best_mae, r.lr
    )
}

fn parse_record(line: &str) -> Result<EpochRecord> {
    let f: Vec<&str> = line.trim().split(',').collect();
    let bad = || Error::Domain(format!("malformed report row `{line}`"));
    if f.len() != 5 {
        return Err(bad());
    }
    Ok(EpochRecord {
        epoch: f[0].parse().map_err(|_| bad())?,
        mean_reward: f[1].parse().map_err(|_| bad())?,
        mean_mae: f[2].parse().map_err(|_| bad())?,
        mean_best_mae: f[3].parse().map_err(|_| bad())?,
        lr: f[4].parse().map_err(|_| bad())?,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where `checkpoint.ckpt` is written after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from `checkpoint.ckpt` in `checkpoint_dir` when present.
    pub resume: bool,
    /// Also write `policy-epoch-NNNN.ckpt` (weights only) for every epoch.
    pub keep_epoch_policies: bool,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

pub fn epoch_policy_file(epoch: usize) -> String {
    format!("policy-epoch-{epoch:04}.ckpt")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: TransformerPolicy,
    pub report: TrainReport,
}

/// Instance `index` of epoch `epoch`.
pub fn training_instance(
    config: &TrainConfig,
    field: &FieldModel,
    poly: &Polygon,
    epoch: usize,
    index: usize,
) -> Result<ProblemInstance> {
    let s = seed::derive(config.rng_seed, "train-instance", &[epoch as u64, index as u64]);
    generate_instance(field, poly, config.n, config.m, config.q, s)
}

/// The probe set, drawn from a stream no training instance uses.
pub fn probe_instances(
    config: &TrainConfig,
    field: &FieldModel,
    poly: &Polygon,
    workers: &Workers,
) -> Result<Vec<ProblemInstance>> {
    let out = workers.map(config.probe_size, |i| {
        let s = seed::derive(config.rng_seed, "probe-instance", &[i as u64]);
        generate_instance(field, poly, config.n, config.m, config.q, s)
    });
    collect_ordered(out)
}

/// Seed for the probe rollouts; identical every epoch.
pub fn probe_seed(config: &TrainConfig) -> u64 {
    seed::derive(config.rng_seed, "probe-rollout", &[])
}

/// Contiguous batch boundaries; sizes differ by at most one.
fn batch_ranges(total: usize, count: usize) -> Vec<std::ops::Range<usize>> {
    let base = total / count;
    let extra = total % count;
    let mut start = 0;
    (0..count)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

fn probe_record(epoch: usize, lr: f64, results: &[InstanceResult]) -> EpochRecord {
    let k = results.len() as f64;
    EpochRecord {
        epoch,
        mean_reward: results.iter().map(InstanceResult::total_reward).sum::<f64>() / k,
        mean_mae: results.iter().map(|r| r.mean_mae).sum::<f64>() / k,
        mean_best_mae: results.iter().map(|r| r.best_mae).sum::<f64>() / k,
        lr,
    }
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub learner: Learner,
    /// Completed epochs.
    pub epoch: usize,
    pub records: Vec<EpochRecord>,
}

/// Keys that may differ between a checkpoint and the run resuming it.
const RESUMABLE_KEYS: [&str; 2] = ["epochs", "workers"];

pub fn state_checkpoint(state: &TrainState, config: &TrainConfig) -> Checkpoint {
    let mut ckpt = policy_checkpoint(&state.learner.policy);
    for (k, v) in train_entries(config) {
        ckpt.set(&format!("train.{k}"), v);
    }
    ckpt.set("state.epoch", state.epoch);
    ckpt.set("state.lr_actor", state.learner.lr_actor);
    ckpt.set("state.lr_critic", state.learner.lr_critic);
    ckpt.set("state.adam_actor_step", state.learner.actor_opt.step);
    ckpt.set("state.adam_critic_step", state.learner.critic_opt.step);
    for r in &state.records {
        ckpt.set(&format!("report.{:06}", r.epoch), record_fields(r));
    }
    ckpt.push_tensors("adam.m.", &state.learner.actor_opt.first);
    ckpt.push_tensors("adam.v.", &state.learner.actor_opt.second);
    ckpt.push_tensors("adam.m.", &state.learner.critic_opt.first);
    ckpt.push_tensors("adam.v.", &state.learner.critic_opt.second);
    ckpt
}

/// Restores a training state, checking it was produced by a run with the
/// same settings as `config` and `net`.
pub fn state_from_checkpoint(ckpt: &Checkpoint, config: &TrainConfig, net: &NetConfig) -> Result<TrainState> {
    let stored_net = get_net_config(ckpt)?;
    if &stored_net != net {
        return Err(Error::Checkpoint(format!(
            "checkpoint network {stored_net:?} differs from the configured {net:?}"
        )));
    }
    for (k, v) in train_entries(config) {
        if RESUMABLE_KEYS.contains(&k) {
            continue;
        }
        let theirs = ckpt.get(&format!("train.{k}"))?;
        if theirs != v {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with {k} = {theirs}, configuration says {v}"
            )));
        }
    }
    let policy = policy_from_checkpoint(ckpt)?;
    let mut learner = Learner::new(
        policy,
        ckpt.get_parsed("state.lr_actor")?,
        ckpt.get_parsed("state.lr_critic")?,
    );
    ckpt.fill_tensors("adam.m.", &mut learner.actor_opt.first)?;
    ckpt.fill_tensors("adam.v.", &mut learner.actor_opt.second)?;
    ckpt.fill_tensors("adam.m.", &mut learner.critic_opt.first)?;
    ckpt.fill_tensors("adam.v.", &mut learner.critic_opt.second)?;
    learner.actor_opt.step = ckpt.get_parsed("state.adam_actor_step")?;
    learner.critic_opt.step = ckpt.get_parsed("state.adam_critic_step")?;
    let epoch: usize = ckpt.get_parsed("state.epoch")?;
    let records = ckpt
        .header
        .iter()
        .filter(|(k, _)| k.starts_with("report."))
        .map(|(_, v)| parse_record(v))
        .collect::<Result<Vec<_>>>()?;
    if records.len() != epoch {
        return Err(Error::Checkpoint(format!(
            "{} report rows stored for {epoch} completed epochs",
            records.len()
        )));
    }
    Ok(TrainState {
        learner,
        epoch,
        records,
    })
}

pub fn initial_train_state(config: &TrainConfig, net: &NetConfig) -> Result<TrainState> {
    let mut policy = TransformerPolicy::init(*net, seed::derive(config.rng_seed, "init", &[]))?;
    if config.zero_decoder {
        policy.actor.zero_decoder();
    }
    let (lr_a, lr_c) = config.learning_rates(0);
    Ok(TrainState {
        learner: Learner::new(policy, lr_a, lr_c),
        epoch: 0,
        records: Vec::new(),
    })
}

fn load_or_init(config: &TrainConfig, net: &NetConfig, options: &TrainOptions) -> Result<TrainState> {
    if options.resume {
        let dir = options
            .checkpoint_dir
            .as_deref()
            .ok_or_else(|| Error::Config("resuming needs a checkpoint directory".into()))?;
        let path = dir.join(CHECKPOINT_FILE);
        if path.exists() {
            let state = state_from_checkpoint(&Checkpoint::read(&path)?, config, net)?;
            log::info!("resuming from {} after epoch {}", path.display(), state.epoch);
            return Ok(state);
        }
        log::info!("no checkpoint at {}, starting fresh", path.display());
    }
    initial_train_state(config, net)
}

/// Runs one epoch: fresh instances, all batches, learning-rate decay.
pub fn train_epoch(
    state: &mut TrainState,
    config: &TrainConfig,
    field: &FieldModel,
    poly: &Polygon,
    workers: &Workers,
) -> Result<BatchStats> {
    let epoch = state.epoch;
    let (lr_a, lr_c) = config.learning_rates(epoch);
    state.learner.lr_actor = lr_a;
    state.learner.lr_critic = lr_c;
    let instances = collect_ordered(workers.map(config.instances_per_epoch, |i| {
        training_instance(config, field, poly, epoch, i)
    }))?;
    let mut sum = BatchStats::default();
    for (b, range) in batch_ranges(instances.len(), config.batch_count)
        .into_iter()
        .enumerate()
    {
        let batch_seed = seed::derive(config.rng_seed, "batch", &[epoch as u64, b as u64]);
        let stats =
            train_batch(&instances[range], &mut state.learner, config, batch_seed, workers).map_err(|e| match e {
                Error::Runtime(msg) => Error::Runtime(format!("epoch {}, batch {}: {msg}", epoch + 1, b + 1)),
                other => other,
            })?;
        let w = stats.episodes as f64;
        sum.episodes += stats.episodes;
        sum.updates += stats.updates;
        sum.mean_reward += stats.mean_reward * w;
        sum.mean_mae += stats.mean_mae * w;
        sum.mean_best_mae += stats.mean_best_mae * w;
        sum.mean_actor_grad_norm += stats.mean_actor_grad_norm * stats.updates as f64;
    }
    let k = sum.episodes as f64;
    sum.mean_reward /= k;
    sum.mean_mae /= k;
    sum.mean_best_mae /= k;
    sum.mean_actor_grad_norm /= sum.updates.max(1) as f64;
    state.epoch += 1;
    let (lr_a, lr_c) = config.learning_rates(state.epoch);
    state.learner.lr_actor = lr_a;
    state.learner.lr_critic = lr_c;
    Ok(sum)
}

pub fn train(
    config: &TrainConfig,
    net: &NetConfig,
    field: &FieldModel,
    poly: &Polygon,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    net.validate()?;
    let started = Instant::now();
    let workers = Workers::new(config.workers)?;
    let mut state = load_or_init(config, net, options)?;
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let probe = if state.epoch < config.epochs {
        probe_instances(config, field, poly, &workers)?
    } else {
        Vec::new()
    };
    while state.epoch < config.epochs {
        let epoch_start = Instant::now();
        let lr = config.learning_rates(state.epoch).0;
        let stats = train_epoch(&mut state, config, field, poly, &workers)?;
        let results = evaluate_policy(
            &state.learner.policy,
            &probe,
            config.horizon,
            probe_seed(config),
            &workers,
        )?;
        let record = probe_record(state.epoch, lr, &results);
        log::info!(
            "epoch {}/{}: train reward {:.5} best {:.5} | probe reward {:.5} mean {:.5} best {:.5} | grad {:.3e} | {:.1}s",
            state.epoch,
            config.epochs,
            stats.mean_reward,
            stats.mean_best_mae,
            record.mean_reward,
            record.mean_mae,
            record.mean_best_mae,
            stats.mean_actor_grad_norm,
            epoch_start.elapsed().as_secs_f64()
        );
        state.records.push(record);
        if let Some(dir) = &options.checkpoint_dir {
            state_checkpoint(&state, config).write(&dir.join(CHECKPOINT_FILE))?;
            if options.keep_epoch_policies {
                policy_checkpoint(&state.learner.policy).write(&dir.join(epoch_policy_file(state.epoch)))?;
            }
        }
    }
    let report = TrainReport {
        records: state.records.clone(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        checkpoint: options.checkpoint_dir.as_ref().map(|d| d.join(CHECKPOINT_FILE)),
    };
    log::info!("training finished in {:.1}s", report.wall_clock_secs);
    Ok(TrainOutcome {
        policy: state.learner.policy,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{Location, SensorReading};

    #[test]
    fn batches_cover_everything_once() {
        let r = batch_ranges(256, 10);
        assert_eq!(r.len(), 10);
        assert_eq!(r[0], 0..26);
        assert_eq!(r[9].end, 256);
        assert!(r.windows(2).all(|w| w[0].end == w[1].start));
        assert!(r.iter().all(|x| x.len() == 25 || x.len() == 26));
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rates(0), (1e-4, 1e-4));
        assert_eq!(c.learning_rates(3).0, 1e-4 * 0.99f64.powi(3));
    }

    #[test]
    fn default_config_validates() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            update_interval: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn report_csv_round_trips() {
        let report = TrainReport {
            records: vec![EpochRecord {
                epoch: 1,
                mean_reward: 0.25,
                mean_mae: 1.0 / 3.0,
                mean_best_mae: 0.1,
                lr: 1e-4,
            }],
            ..TrainReport::default()
        };
        let csv = report.to_csv();
        assert!(csv.starts_with(REPORT_HEADER));
        assert_eq!(TrainReport::parse_csv(&csv).unwrap(), report.records);
    }

    fn field() -> FieldModel {
        FieldModel::new(vec![
            SensorReading::new(Location::new(0.1, 0.1), 1.0),
            SensorReading::new(Location::new(0.9, 0.2), 3.0),
            SensorReading::new(Location::new(0.5, 0.8), -1.0),
        ])
        .unwrap()
    }

    fn square() -> Polygon {
        Polygon::new(vec![
            Location::new(0.0, 0.0),
            Location::new(1.0, 0.0),
            Location::new(1.0, 1.0),
            Location::new(0.0, 1.0),
        ])
        .unwrap()
    }

    fn small() -> (TrainConfig, NetConfig) {
        let config = TrainConfig {
            epochs: 2,
            instances_per_epoch: 6,
            batch_count: 2,
            horizon: 8,
            update_interval: 4,
            n: 2,
            m: 3,
            q: 4,
            probe_size: 3,
            rng_seed: 21,
            ..TrainConfig::default()
        };
        let net = NetConfig {
            d_h: 4,
            d_ff: 6,
            layers: 1,
            ..NetConfig::default()
        };
        (config, net)
    }

    #[test]
    fn zero_epochs_returns_the_initial_policy() {
        let (mut config, net) = small();
        config.epochs = 0;
        let out = train(&config, &net, &field(), &square(), &TrainOptions::default()).unwrap();
        assert!(out.report.records.is_empty());
        assert_eq!(out.policy, initial_train_state(&config, &net).unwrap().learner.policy);
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let (config, net) = small();
        let full = train(&config, &net, &field(), &square(), &TrainOptions::default()).unwrap();
        assert_eq!(full.report.records.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let options = TrainOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            resume: true,
            keep_epoch_policies: true,
        };
        let first = TrainConfig { epochs: 1, ..config };
        train(&first, &net, &field(), &square(), &options).unwrap();
        assert!(dir.path().join(epoch_policy_file(1)).exists());
        let resumed = train(&config, &net, &field(), &square(), &options).unwrap();
        assert_eq!(resumed.policy, full.policy);
        assert_eq!(resumed.report.records, full.report.records);
    }

    #[test]
    fn resume_rejects_a_different_run() {
        let (config, net) = small();
        let dir = tempfile::tempdir().unwrap();
        let options = TrainOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            resume: true,
            keep_epoch_policies: false,
        };
        train(
            &TrainConfig { epochs: 1, ..config },
            &net,
            &field(),
            &square(),
            &options,
        )
        .unwrap();
        let other = TrainConfig { rng_seed: 22, ..config };
        let err = train(&other, &net, &field(), &square(), &options)
            .unwrap_err()
            .to_string();
        assert!(err.contains("rng_seed"), "{err}");
    }
}
