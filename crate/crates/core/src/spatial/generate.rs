use rand::Rng;

use super::{FieldModel, Location, Polygon, ProblemInstance, SensorReading};
use crate::error::{Error, Result};
use crate::seed;

/// Rejection attempts allowed per requested point.
pub const RETRY_FACTOR: usize = 10_000;

/// Draws `n + m + q` distinct uniform points inside `poly`, assigns ground
/// truth from `field`, and keeps the last `q` as evaluation points.
pub fn generate_instance(
    field: &FieldModel,
    poly: &Polygon,
    n: usize,
    m: usize,
    q: usize,
    rng_seed: u64,
) -> Result<ProblemInstance> {
    if n == 0 || m == 0 || q == 0 {
        return Err(Error::Domain(format!(
            "instance dimensions must be positive (n = {n}, m = {m}, q = {q})"
        )));
    }
    let total = n + m + q;
    let cap = RETRY_FACTOR * total;
    let (lo, hi) = poly.bounds();
    let mut rng = seed::rng(rng_seed);
    let mut points: Vec<Location> = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while points.len() < total {
        if attempts == cap {
            return Err(Error::Generation(format!(
                "placed {} of {total} points after {cap} rejection attempts",
                points.len()
            )));
        }
        attempts += 1;
        let p = Location::new(rng.gen_range(lo.x..=hi.x), rng.gen_range(lo.y..=hi.y));
        if poly.contains(&p) && !points.contains(&p) {
            points.push(p);
        }
    }
    let eval = points
        .split_off(n + m)
        .into_iter()
        .map(|p| SensorReading::new(p, field.value_at(&p)))
        .collect();
    let truth = points.iter().map(|p| field.value_at(p)).collect();
    ProblemInstance::new(points, truth, eval, n)
}
