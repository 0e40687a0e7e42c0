//! Bootstrapped n-step return targets.

/// Backward recursion `R <- r_i + gamma * R` seeded with `bootstrap`, over a
/// whole segment. Targets are aligned with `rewards` (oldest first).
pub fn n_step_targets(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (slot, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *slot = acc;
    }
    out
}

/// Targets with lookahead capped at `n_step`: step `i` sums the rewards
/// `i .. i + h` and bootstraps from `values[i + h]`, with
/// `h = min(n_step, len - i)`. `values` holds the critic estimate of every
/// state in the segment plus the state after it (`len + 1` entries).
///
/// With `n_step >= rewards.len()` this equals
/// `n_step_targets(rewards, values[len], gamma)`.
pub fn capped_targets(rewards: &[f64], values: &[f64], n_step: usize, gamma: f64) -> Vec<f64> {
    let len = rewards.len();
    assert_eq!(values.len(), len + 1, "one value per state plus the bootstrap state");
    assert!(n_step >= 1, "n_step must be at least 1");
    if n_step >= len {
        return n_step_targets(rewards, values[len], gamma);
    }
    (0..len)
        .map(|i| {
            let h = n_step.min(len - i);
            let mut acc = values[i + h];
            for j in (i..i + h).rev() {
                acc = rewards[j] + gamma * acc;
            }
            acc
        })
        .collect()
}
