use rand::Rng;

use crate::env::MoveAction;
use crate::error::{Error, Result};

/// Tolerance on the total mass of a distribution handed to the sampler.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Probabilities over ordered position pairs `(a, b)`, row-major `len x len`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionProbs {
    len: usize,
    probs: Vec<f64>,
}

impl ActionProbs {
    /// Validates entries (finite, non-negative, zero diagonal) and total mass.
    pub fn new(len: usize, probs: Vec<f64>) -> Result<Self> {
        let p = Self::new_unchecked(len, probs);
        p.validate()?;
        Ok(p)
    }

    pub fn new_unchecked(len: usize, probs: Vec<f64>) -> Self {
        assert_eq!(probs.len(), len * len, "probability matrix must be square");
        Self { len, probs }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Runtime(format!(
                "probability ({}, {}) is {}",
                i / self.len,
                i % self.len,
                self.probs[i]
            )));
        }
        if let Some(a) = (0..self.len).find(|&a| self.get(a, a) != 0.0) {
            return Err(Error::Runtime(format!("diagonal probability ({a}, {a}) is non-zero")));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Runtime(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.probs[a * self.len + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Most probable pair; the first in row-major order on ties.
    pub fn argmax(&self) -> MoveAction {
        let (i, _) = self.probs.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |(bi, bp), (i, &p)| if p > bp { (i, p) } else { (bi, bp) },
        );
        MoveAction {
            a: i / self.len,
            b: i % self.len,
        }
    }
}

/// Categorical draw over the flattened matrix. Returns the pair and its log
/// probability.
pub fn sample_action(probs: &ActionProbs, rng: &mut impl Rng) -> Result<(MoveAction, f64)> {
    probs.validate()?;
    let total: f64 = probs.probs.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_nonzero = None;
    for (i, &p) in probs.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_nonzero = Some(i);
        acc += p;
        if u < acc {
            return Ok(pick(probs, i));
        }
    }
    // Rounding can leave `u` just past the accumulated mass.
    let i = last_nonzero.ok_or_else(|| Error::Runtime("distribution has no support".into()))?;
    Ok(pick(probs, i))
}

fn pick(probs: &ActionProbs, i: usize) -> (MoveAction, f64) {
    let action = MoveAction {
        a: i / probs.len,
        b: i % probs.len,
    };
    (action, probs.probs[i].ln())
}
