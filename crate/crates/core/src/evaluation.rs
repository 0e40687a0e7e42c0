//! Policy and baseline evaluation over instance sets, subset aggregates and
//! the plain-text tables the command line tool emits.
//!
//! Episode `i` of a run with seed `s` starts from the state drawn with
//! `derive(s, "initial", [i])` and samples with `derive(s, "actions", [i])`,
//! so a policy and a baseline evaluated with the same seed face identical
//! starting states.

use std::fmt::Write;

use crate::env::{initial_state, rollout_from, ActionPolicy, EnvConfig, EpisodeTrace, MoveAction, PlacementState};
use crate::error::{domain, Error, Result};
use crate::par::{collect_ordered, Workers};
use crate::policy::ActionProbs;
use crate::seed;
use crate::spatial::ProblemInstance;

pub const DEFAULT_SUBSETS: [u32; 5] = [20, 40, 60, 80, 100];

/// Outcome of one episode on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceResult {
    pub initial_mae: f64,
    /// Mean over every visited state, the initial one included.
    pub mean_mae: f64,
    pub best_mae: f64,
}

impl InstanceResult {
    pub fn from_trace(trace: &EpisodeTrace) -> Self {
        Self {
            initial_mae: trace.initial_mae,
            mean_mae: trace.mean_mae(),
            best_mae: trace.best_mae,
        }
    }

    /// Total unscaled reward of the episode.
    pub fn total_reward(&self) -> f64 {
        self.initial_mae - self.best_mae
    }
}

pub fn initial_for(instance: &ProblemInstance, rng_seed: u64, index: usize) -> PlacementState {
    initial_state(instance, seed::derive(rng_seed, "initial", &[index as u64]))
}

pub fn action_seed(rng_seed: u64, index: usize) -> u64 {
    seed::derive(rng_seed, "actions", &[index as u64])
}

/// Rolls `policy` out for `steps` moves on episode `index`.
pub fn run_policy(
    instance: &ProblemInstance,
    policy: &impl ActionPolicy,
    steps: usize,
    rng_seed: u64,
    index: usize,
) -> Result<EpisodeTrace> {
    let initial = initial_for(instance, rng_seed, index);
    let mut rng = seed::rng(action_seed(rng_seed, index));
    if steps == 0 {
        let mae = crate::env::state_mae(instance, &initial);
        return Ok(EpisodeTrace {
            initial_mae: mae,
            steps: Vec::new(),
            best_mae: mae,
            best_state: initial.clone(),
            final_state: initial,
        });
    }
    let config = EnvConfig {
        horizon: steps,
        reward_scale: 1.0,
        ..EnvConfig::default()
    };
    rollout_from(instance, policy, &config, initial, &mut rng)
}

pub fn evaluate_policy<P: ActionPolicy + Sync>(
    policy: &P,
    instances: &[ProblemInstance],
    steps: usize,
    rng_seed: u64,
    workers: &Workers,
) -> Result<Vec<InstanceResult>> {
    let results = workers.map(instances.len(), |i| {
        run_policy(&instances[i], policy, steps, rng_seed, i).map(|t| InstanceResult::from_trace(&t))
    });
    collect_ordered(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetAggregate {
    pub label: String,
    pub percent: u32,
    pub count: usize,
    pub mean_of_mean: f64,
    pub std_of_mean: f64,
    pub mean_of_best: f64,
    pub std_of_best: f64,
}

/// Number of instances in a `percent` prefix of `total`, rounded up.
pub fn subset_count(total: usize, percent: u32) -> usize {
    (total * percent as usize).div_ceil(100)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
    (mean, var.sqrt())
}

/// Aggregates over deterministic prefixes of `results`.
pub fn subset_aggregates(label: &str, results: &[InstanceResult], percents: &[u32]) -> Result<Vec<SubsetAggregate>> {
    if results.is_empty() {
        return domain("no instances to aggregate");
    }
    percents
        .iter()
        .map(|&p| {
            if p == 0 || p > 100 {
                return domain(format!("subset percentage must lie in 1..=100, got {p}"));
            }
            let count = subset_count(results.len(), p);
            let prefix = &results[..count];
            let means: Vec<f64> = prefix.iter().map(|r| r.mean_mae).collect();
            let bests: Vec<f64> = prefix.iter().map(|r| r.best_mae).collect();
            let (mean_of_mean, std_of_mean) = mean_std(&means);
            let (mean_of_best, std_of_best) = mean_std(&bests);
            Ok(SubsetAggregate {
                label: label.to_string(),
                percent: p,
                count,
                mean_of_mean,
                std_of_mean,
                mean_of_best,
                std_of_best,
            })
        })
        .collect()
}

pub const RESULTS_HEADER: &str = "label,percent,count,mean_of_mean,std_of_mean,mean_of_best,std_of_best";

/// `# key=value` lines followed by the aggregate rows.
pub fn format_results_table(meta: &[(&str, String)], rows: &[SubsetAggregate]) -> String {
    let mut s = String::new();
    for (k, v) in meta {
        writeln!(s, "# {k}={v}").unwrap();
    }
    writeln!(s, "{RESULTS_HEADER}").unwrap();
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.label, r.percent, r.count, r.mean_of_mean, r.std_of_mean, r.mean_of_best, r.std_of_best
        )
        .unwrap();
    }
    s
}

fn table_rows<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return domain(format!("expected header `{header}`")),
    }
    let width = header.split(',').count();
    let rows: Vec<(usize, Vec<&str>)> = lines.map(|(i, l)| (i + 1, l.trim().split(',').collect())).collect();
    if let Some((line, row)) = rows.iter().find(|(_, r)| r.len() != width) {
        return domain(format!("line {line}: expected {width} fields, found {}", row.len()));
    }
    Ok(rows.into_iter())
}

fn field<T: std::str::FromStr>(line: usize, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Domain(format!("line {line}: cannot parse `{raw}`")))
}

pub fn parse_results_table(text: &str) -> Result<Vec<SubsetAggregate>> {
    table_rows(text, RESULTS_HEADER)?
        .map(|(line, r)| {
            Ok(SubsetAggregate {
                label: r[0].to_string(),
                percent: field(line, r[1])?,
                count: field(line, r[2])?,
                mean_of_mean: field(line, r[3])?,
                std_of_mean: field(line, r[4])?,
                mean_of_best: field(line, r[5])?,
                std_of_best: field(line, r[6])?,
            })
        })
        .collect()
}

pub const INSTANCE_HEADER: &str = "index,initial_mae,mean_mae,best_mae";

pub fn format_instance_table(results: &[InstanceResult]) -> String {
    let mut s = format!("{INSTANCE_HEADER}\n");
    for (i, r) in results.iter().enumerate() {
        writeln!(s, "{i},{},{},{}", r.initial_mae, r.mean_mae, r.best_mae).unwrap();
    }
    s
}

pub fn parse_instance_table(text: &str) -> Result<Vec<InstanceResult>> {
    table_rows(text, INSTANCE_HEADER)?
        .map(|(line, r)| {
            Ok(InstanceResult {
                initial_mae: field(line, r[1])?,
                mean_mae: field(line, r[2])?,
                best_mae: field(line, r[3])?,
            })
        })
        .collect()
}

pub const ACTION_HEADER: &str = "a,b,location_a,location_b,prob,argmax";

/// Every ordered position pair with its probability; the argmax row carries
/// flag 1.
pub fn format_action_table(state: &PlacementState, probs: &ActionProbs) -> String {
    let best = probs.argmax();
    let order = state.order();
    let mut s = String::new();
    writeln!(s, "# placed_positions=0..{}", state.n()).unwrap();
    writeln!(s, "# argmax={},{}", best.a, best.b).unwrap();
    writeln!(s, "{ACTION_HEADER}").unwrap();
    for a in 0..probs.len() {
        for b in 0..probs.len() {
            let flag = u8::from(a == best.a && b == best.b);
            writeln!(s, "{a},{b},{},{},{},{flag}", order[a], order[b], probs.get(a, b)).unwrap();
        }
    }
    s
}

/// Reloads an action table: the probability matrix and the flagged pair.
pub fn parse_action_table(text: &str) -> Result<(ActionProbs, MoveAction)> {
    let rows: Vec<(usize, Vec<&str>)> = table_rows(text, ACTION_HEADER)?.collect();
    let len = (rows.len() as f64).sqrt().round() as usize;
    if len * len != rows.len() || len < 2 {
        return domain(format!("{} rows do not form a square action table", rows.len()));
    }
    let mut probs = vec![f64::NAN; len * len];
    let mut flagged = None;
    for (line, r) in &rows {
        let a: usize = field(*line, r[0])?;
        let b: usize = field(*line, r[1])?;
        if a >= len || b >= len {
            return domain(format!("line {line}: pair ({a}, {b}) out of range"));
        }
        probs[a * len + b] = field(*line, r[4])?;
        if field::<u8>(*line, r[5])? == 1 {
            if flagged.is_some() {
                return domain(format!("line {line}: more than one flagged pair"));
            }
            flagged = Some(MoveAction { a, b });
        }
    }
    let flagged = flagged.ok_or_else(|| Error::Domain("no flagged pair".into()))?;
    Ok((ActionProbs::new(len, probs)?, flagged))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(mean: f64, best: f64) -> InstanceResult {
        InstanceResult {
            initial_mae: mean + 1.0,
            mean_mae: mean,
            best_mae: best,
        }
    }

    #[test]
    fn single_instance_aggregates_are_its_values() {
        let rows = subset_aggregates("x", &[r(2.5, 1.5)], &[100]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].count, 1);
        assert_eq!(rows[0].mean_of_mean, 2.5);
        assert_eq!(rows[0].mean_of_best, 1.5);
        assert_eq!(rows[0].std_of_mean, 0.0);
    }

    #[test]
    fn subsets_are_prefixes() {
        let results: Vec<_> = (0..10).map(|i| r(i as f64, 0.0)).collect();
        let rows = subset_aggregates("x", &results, &DEFAULT_SUBSETS).unwrap();
        assert_eq!(rows.iter().map(|r| r.count).collect::<Vec<_>>(), vec![2, 4, 6, 8, 10]);
        assert_eq!(rows[0].mean_of_mean, 0.5);
        assert_eq!(rows[0].std_of_mean, 0.5);
        assert_eq!(subset_count(3, 20), 1);
        assert!(subset_aggregates("x", &results, &[0]).is_err());
        assert!(subset_aggregates("x", &[], &[100]).is_err());
    }

    #[test]
    fn tables_round_trip() {
        let results = vec![r(1.25, 0.5), r(0.1, 1.0 / 3.0)];
        let rows = subset_aggregates("lbl", &results, &DEFAULT_SUBSETS).unwrap();
        let text = format_results_table(&[("seed", "7".into())], &rows);
        assert!(text.starts_with("# seed=7\n"));
        assert_eq!(parse_results_table(&text).unwrap(), rows);
        assert_eq!(parse_instance_table(&format_instance_table(&results)).unwrap(), results);
        assert!(parse_results_table("nope\n1,2").is_err());
    }

    #[test]
    fn action_table_round_trip() {
        let state = PlacementState::new(vec![2, 0, 1], 1).unwrap();
        let probs = ActionProbs::new(3, vec![0.0, 0.1, 0.2, 0.3, 0.0, 0.05, 0.25, 0.1, 0.0]).unwrap();
        let text = format_action_table(&state, &probs);
        let (back, flagged) = parse_action_table(&text).unwrap();
        assert_eq!(back, probs);
        assert_eq!(flagged, MoveAction { a: 1, b: 0 });
        assert_eq!(flagged, back.argmax());
    }
}
