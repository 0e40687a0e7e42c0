//! Search baselines sharing the environment's scoring: stochastic search,
//! context distance search and exhaustive enumeration for small pools.

use itertools::Itertools;
use rand::Rng;

use crate::env::{reward_from_mae, state_mae, MoveAction, PlacementState, StepRecord};
use crate::error::{domain, Result};
use crate::evaluation::InstanceResult;
use crate::seed;
use crate::spatial::ProblemInstance;

pub const DEFAULT_ITERATIONS: usize = 1000;

/// Largest pool the exhaustive context search accepts.
pub const EXHAUSTIVE_MAX_POOL: usize = 12;

/// Largest number of placements [`exhaustive_optimum`] enumerates.
pub const ENUMERATION_LIMIT: u128 = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub initial_mae: f64,
    pub best_state: PlacementState,
    pub best_mae: f64,
    /// One row per applied move, in the shared trace format.
    pub records: Vec<StepRecord>,
}

impl SearchResult {
    /// Mean MAE over every visited state, the initial one included.
    pub fn mean_mae(&self) -> f64 {
        let total = self.initial_mae + self.records.iter().map(|r| r.mae).sum::<f64>();
        total / (self.records.len() + 1) as f64
    }

    pub fn instance_result(&self) -> InstanceResult {
        InstanceResult {
            initial_mae: self.initial_mae,
            mean_mae: self.mean_mae(),
            best_mae: self.best_mae,
        }
    }
}

fn check_state(instance: &ProblemInstance, state: &PlacementState) -> Result<()> {
    if state.len() != instance.len() || state.n() != instance.n() {
        return domain(format!(
            "state of length {} with {} placed does not match an instance with n = {}, m = {}",
            state.len(),
            state.n(),
            instance.n(),
            instance.m()
        ));
    }
    Ok(())
}

/// Tracks the walk and the lowest-error state seen.
struct Walk {
    state: PlacementState,
    initial_mae: f64,
    best: f64,
    best_state: PlacementState,
    records: Vec<StepRecord>,
}

impl Walk {
    fn new(instance: &ProblemInstance, initial: &PlacementState) -> Self {
        let mae = state_mae(instance, initial);
        Self {
            state: initial.clone(),
            initial_mae: mae,
            best: mae,
            best_state: initial.clone(),
            records: Vec::new(),
        }
    }

    fn apply(&mut self, instance: &ProblemInstance, action: MoveAction) {
        self.state.swap_in_place(action);
        let mae = state_mae(instance, &self.state);
        let (reward, best) = reward_from_mae(self.best, mae);
        if best < self.best {
            self.best_state = self.state.clone();
        }
        self.best = best;
        self.records.push(StepRecord {
            step: self.records.len() + 1,
            action,
            reward,
            mae,
            best_mae: best,
        });
    }

    fn finish(self) -> SearchResult {
        SearchResult {
            initial_mae: self.initial_mae,
            best_state: self.best_state,
            best_mae: self.best,
            records: self.records,
        }
    }
}

/// Random walk over uniform (placed, candidate) swaps, keeping the best
/// state seen.
pub fn stochastic_search(
    instance: &ProblemInstance,
    initial: &PlacementState,
    iterations: usize,
    rng_seed: u64,
) -> Result<SearchResult> {
    check_state(instance, initial)?;
    let (n, len) = (initial.n(), initial.len());
    let mut rng = seed::rng(rng_seed);
    let mut walk = Walk::new(instance, initial);
    for _ in 0..iterations {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(n..len);
        walk.apply(instance, MoveAction { a, b });
    }
    Ok(walk.finish())
}

/// Sum of pairwise Euclidean distances among the placed locations.
pub fn separation(instance: &ProblemInstance, placed: &[usize]) -> f64 {
    let locs = instance.locations();
    placed
        .iter()
        .tuple_combinations()
        .map(|(&i, &j)| locs[i].distance(&locs[j]))
        .sum()
}

/// Steepest ascent on [`separation`]: every step applies the
/// (placed, candidate) swap with the largest gain, stopping after `max_steps`
/// moves or when no swap gains. Returns the visited state with the lowest MAE.
pub fn context_distance_search(
    instance: &ProblemInstance,
    initial: &PlacementState,
    max_steps: usize,
) -> Result<SearchResult> {
    check_state(instance, initial)?;
    let locs = instance.locations();
    let (n, len) = (initial.n(), initial.len());
    let mut walk = Walk::new(instance, initial);
    let mut objective = separation(instance, initial.placed());
    for _ in 0..max_steps {
        let order = walk.state.order();
        let mut best: Option<(f64, MoveAction)> = None;
        for a in 0..n {
            let out = &locs[order[a]];
            for b in n..len {
                let inn = &locs[order[b]];
                let gain: f64 = (0..n)
                    .filter(|&k| k != a)
                    .map(|k| inn.distance(&locs[order[k]]) - out.distance(&locs[order[k]]))
                    .sum();
                if best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, MoveAction { a, b }));
                }
            }
        }
        // Gains within roundoff of zero would not strictly increase the
        // recomputed objective.
        let Some((gain, action)) = best else { break };
        if gain <= 1e-12 * (1.0 + objective) {
            break;
        }
        walk.apply(instance, action);
        objective = separation(instance, walk.state.placed());
    }
    Ok(walk.finish())
}

fn binomial(k: usize, r: usize) -> u128 {
    (0..r as u128).fold(1u128, |acc, i| acc * (k as u128 - i) / (i + 1))
}

/// The state placing `placed` (in the given order) followed by the remaining
/// pool indices in ascending order.
pub fn state_for_placement(instance: &ProblemInstance, placed: &[usize]) -> Result<PlacementState> {
    let mut order: Vec<usize> = placed.to_vec();
    order.extend((0..instance.len()).filter(|i| !placed.contains(i)));
    PlacementState::new(order, placed.len())
}

/// The placement maximizing [`separation`] over every `n`-subset of the pool.
/// Only for pools of at most [`EXHAUSTIVE_MAX_POOL`] locations.
pub fn exhaustive_context_search(instance: &ProblemInstance) -> Result<SearchResult> {
    if instance.len() > EXHAUSTIVE_MAX_POOL {
        return domain(format!(
            "exhaustive context search is limited to {EXHAUSTIVE_MAX_POOL} locations, the pool has {}",
            instance.len()
        ));
    }
    let (placed, _) = (0..instance.len())
        .combinations(instance.n())
        .map(|c| {
            let s = separation(instance, &c);
            (c, s)
        })
        .fold(
            (Vec::new(), f64::NEG_INFINITY),
            |acc, cur| if cur.1 > acc.1 { cur } else { acc },
        );
    let state = state_for_placement(instance, &placed)?;
    let mae = state_mae(instance, &state);
    Ok(SearchResult {
        initial_mae: mae,
        best_state: state,
        best_mae: mae,
        records: Vec::new(),
    })
}

/// Minimum MAE over all `C(n + m, n)` placements, with a minimizing set.
pub fn exhaustive_optimum(instance: &ProblemInstance) -> Result<(Vec<usize>, f64)> {
    let count = binomial(instance.len(), instance.n());
    if count > ENUMERATION_LIMIT {
        return domain(format!(
            "{count} placements exceed the enumeration limit {ENUMERATION_LIMIT}"
        ));
    }
    let best = (0..instance.len())
        .combinations(instance.n())
        .map(|c| {
            let mae = crate::spatial::score_network(instance, &c).expect("valid placement");
            (c, mae)
        })
        .fold(
            (Vec::new(), f64::INFINITY),
            |acc, cur| if cur.1 < acc.1 { cur } else { acc },
        );
    Ok(best)
}
