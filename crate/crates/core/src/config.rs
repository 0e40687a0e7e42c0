//! Flat `key = value` run configuration.
//!
//! Keys mirror the field names of [`TrainConfig`] and [`NetConfig`], plus
//! `field`, `region` and `out_dir` paths (resolved against the directory of
//! the config file) and `keep_epoch_policies`. Booleans are `true` or
//! `false`; `#` starts a comment.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::{NetConfig, Variant};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub net: NetConfig,
    /// Seed readings defining the ground-truth field.
    pub field: Option<PathBuf>,
    /// Region polygon.
    pub region: Option<PathBuf>,
    /// Directory for checkpoints and the report.
    pub out_dir: Option<PathBuf>,
    /// Also write a policy-only checkpoint for every epoch.
    pub keep_epoch_policies: bool,
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse value `{raw}`")))
}

/// Sets one trainer field. Returns `Ok(false)` when `key` is not a trainer key.
pub fn apply_train_key(cfg: &mut TrainConfig, key: &str, raw: &str) -> Result<bool> {
    match key {
        "epochs" => cfg.epochs = parse_value(key, raw)?,
        "instances_per_epoch" => cfg.instances_per_epoch = parse_value(key, raw)?,
        "batch_count" => cfg.batch_count = parse_value(key, raw)?,
        "horizon" => cfg.horizon = parse_value(key, raw)?,
        "update_interval" => cfg.update_interval = parse_value(key, raw)?,
        "discount" => cfg.discount = parse_value(key, raw)?,
        "n_step" => cfg.n_step = parse_value(key, raw)?,
        "lr_actor" => cfg.lr_actor = parse_value(key, raw)?,
        "lr_critic" => cfg.lr_critic = parse_value(key, raw)?,
        "lr_decay" => cfg.lr_decay = parse_value(key, raw)?,
        "reward_scale" => cfg.reward_scale = parse_value(key, raw)?,
        "rng_seed" => cfg.rng_seed = parse_value(key, raw)?,
        "n" => cfg.n = parse_value(key, raw)?,
        "m" => cfg.m = parse_value(key, raw)?,
        "q" => cfg.q = parse_value(key, raw)?,
        "probe_size" => cfg.probe_size = parse_value(key, raw)?,
        "workers" => cfg.workers = parse_value(key, raw)?,
        "zero_decoder" => cfg.zero_decoder = parse_bool(key, raw)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Trainer fields as `(key, value)` pairs. Values re-parse to the same field.
pub fn train_entries(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("epochs", cfg.epochs.to_string()),
        ("instances_per_epoch", cfg.instances_per_epoch.to_string()),
        ("batch_count", cfg.batch_count.to_string()),
        ("horizon", cfg.horizon.to_string()),
        ("update_interval", cfg.update_interval.to_string()),
        ("discount", cfg.discount.to_string()),
        ("n_step", cfg.n_step.to_string()),
        ("lr_actor", cfg.lr_actor.to_string()),
        ("lr_critic", cfg.lr_critic.to_string()),
        ("lr_decay", cfg.lr_decay.to_string()),
        ("reward_scale", cfg.reward_scale.to_string()),
        ("rng_seed", cfg.rng_seed.to_string()),
        ("n", cfg.n.to_string()),
        ("m", cfg.m.to_string()),
        ("q", cfg.q.to_string()),
        ("probe_size", cfg.probe_size.to_string()),
        ("workers", cfg.workers.to_string()),
        ("zero_decoder", cfg.zero_decoder.to_string()),
    ]
}

/// Sets one network field. Returns `Ok(false)` when `key` is not a network key.
pub fn apply_net_key(cfg: &mut NetConfig, key: &str, raw: &str) -> Result<bool> {
    match key {
        "d_h" => cfg.d_h = parse_value(key, raw)?,
        "d_ff" => cfg.d_ff = parse_value(key, raw)?,
        "layers" => cfg.layers = parse_value(key, raw)?,
        "clip" => cfg.clip = parse_value(key, raw)?,
        "variant" => {
            cfg.variant = raw
                .parse::<Variant>()
                .map_err(|_| Error::Config(format!("key `variant`: unknown variant `{raw}`")))?
        }
        _ => return Ok(false),
    }
    Ok(true)
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{key}`: expected true or false, got `{raw}`"
        ))),
    }
}

impl RunConfig {
    /// Parses config text; relative paths are joined onto `base_dir`.
    pub fn parse(text: &str, source: &Path, base_dir: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("{}:{}: {msg}", source.display(), i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("key `{key}` given twice")));
            }
            let wrap = |e: Error| match e {
                Error::Config(msg) => at(msg),
                other => other,
            };
            if apply_train_key(&mut cfg.train, key, value).map_err(wrap)?
                || apply_net_key(&mut cfg.net, key, value).map_err(wrap)?
            {
                continue;
            }
            match key {
                "field" => cfg.field = Some(base_dir.join(value)),
                "region" => cfg.region = Some(base_dir.join(value)),
                "out_dir" => cfg.out_dir = Some(base_dir.join(value)),
                "keep_epoch_policies" => cfg.keep_epoch_policies = parse_bool(key, value).map_err(wrap)?,
                _ => return Err(at(format!("unknown key `{key}`"))),
            }
        }
        cfg.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        cfg.net.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, path, base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("run.conf"), Path::new("/base"))
    }

    #[test]
    fn keys_override_defaults() {
        let cfg = parse(
            "# desk run\nepochs = 3\nd_h = 32\nvariant = mask-swap\nfield = data/f.csv  # readings\nkeep_epoch_policies = true\n",
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.net.d_h, 32);
        assert_eq!(cfg.net.variant, Variant::MaskSwap);
        assert_eq!(cfg.field, Some(PathBuf::from("/base/data/f.csv")));
        assert!(cfg.keep_epoch_policies);
        assert_eq!(cfg.train.horizon, TrainConfig::default().horizon);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("epochs = 1\nlearning_rate = 3\n").unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(err.contains("run.conf:2"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(parse("epochs = many").unwrap_err().to_string().contains("epochs"));
        assert!(parse("epochs").is_err());
        assert!(parse("n = 1\nn = 2").is_err());
        assert!(parse("update_interval = 300").is_err());
        assert!(parse("d_h = 3").is_err());
    }

    #[test]
    fn train_entries_round_trip() {
        let mut cfg = TrainConfig {
            lr_actor: 3.3e-5,
            discount: 0.95,
            ..TrainConfig::default()
        };
        cfg.rng_seed = u64::MAX;
        let mut back = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        for (k, v) in train_entries(&cfg) {
            assert!(apply_train_key(&mut back, k, &v).unwrap());
        }
        assert_eq!(back, cfg);
    }
}
