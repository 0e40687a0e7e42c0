//! Locations, inverse distance weighting and placement scoring.
//!
//! Distances are planar Euclidean over raw latitude/longitude degrees. A query
//! closer than [`EPS_DIST`] to a sensor takes that sensor's value.

mod generate;
pub mod io;
mod polygon;

pub use generate::generate_instance;
pub use polygon::{point_in_polygon, Polygon};

use crate::error::{domain, Result};

/// Queries within this distance (degrees) of a sensor return its value.
pub const EPS_DIST: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    /// Latitude, degrees.
    pub x: f64,
    /// Longitude, degrees.
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn distance(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A located observation of the environmental variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub location: Location,
    pub value: f64,
}

impl SensorReading {
    pub const fn new(location: Location, value: f64) -> Self {
        Self { location, value }
    }
}

/// IDW estimate at `query` from `(location, value)` pairs. Returns `None` on
/// an empty input.
#[inline]
fn idw_iter<'a>(sensors: impl IntoIterator<Item = (&'a Location, f64)>, query: &Location) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut any = false;
    for (loc, value) in sensors {
        any = true;
        let d = loc.distance(query);
        if d < EPS_DIST {
            return Some(value);
        }
        let w = 1.0 / d;
        num += w * value;
        den += w;
    }
    any.then(|| num / den)
}

/// Inverse-distance-weighted estimate of the field at `query`, with weights
/// `1 / d_i`.
pub fn idw_estimate(sensors: &[SensorReading], query: &Location) -> Result<f64> {
    idw_iter(sensors.iter().map(|s| (&s.location, s.value)), query)
        .map_or_else(|| domain("idw_estimate needs at least one sensor"), Ok)
}

/// Mean absolute error between `truth` and `predicted`.
pub fn mae(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return domain(format!(
            "mae length mismatch: {} truth values vs {} predictions",
            truth.len(),
            predicted.len()
        ));
    }
    if truth.is_empty() {
        return domain("mae needs at least one value");
    }
    let total: f64 = truth.iter().zip(predicted).map(|(t, p)| (t - p).abs()).sum();
    Ok(total / truth.len() as f64)
}

/// The fitted IDW model that supplies ground truth for generated instances.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    readings: Vec<SensorReading>,
}

impl FieldModel {
    pub fn new(readings: Vec<SensorReading>) -> Result<Self> {
        if readings.is_empty() {
            return domain("field model needs at least one seed reading");
        }
        for (i, r) in readings.iter().enumerate() {
            if !r.location.is_finite() || !r.value.is_finite() {
                return domain(format!("seed reading {i} is not finite"));
            }
            if readings[..i].iter().any(|o| o.location == r.location) {
                return domain(format!(
                    "seed reading {i} duplicates location ({}, {})",
                    r.location.x, r.location.y
                ));
            }
        }
        Ok(Self { readings })
    }

    pub fn readings(&self) -> &[SensorReading] {
        &self.readings
    }

    pub fn value_at(&self, query: &Location) -> f64 {
        idw_iter(self.readings.iter().map(|s| (&s.location, s.value)), query).expect("field model is non-empty")
    }

    /// Smallest and largest seed value.
    pub fn value_range(&self) -> (f64, f64) {
        self.readings
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.value), hi.max(r.value))
            })
    }
}

/// A sensor placement problem: `n + m` pooled locations with ground truth,
/// of which `n` receive sensors, scored on `q` held-out evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    all_locations: Vec<Location>,
    truth: Vec<f64>,
    eval_points: Vec<SensorReading>,
    n: usize,
    m: usize,
}

impl ProblemInstance {
    pub fn new(
        all_locations: Vec<Location>,
        truth: Vec<f64>,
        eval_points: Vec<SensorReading>,
        n: usize,
    ) -> Result<Self> {
        let total = all_locations.len();
        if n == 0 || n >= total {
            return domain(format!("instance needs n >= 1 and m >= 1 (n = {n}, {total} locations)"));
        }
        if truth.len() != total {
            return domain(format!("{} truth values for {total} locations", truth.len()));
        }
        if eval_points.is_empty() {
            return domain("instance needs at least one evaluation point");
        }
        for (i, (loc, z)) in all_locations.iter().zip(&truth).enumerate() {
            if !loc.is_finite() || !z.is_finite() {
                return domain(format!("location {i} is not finite"));
            }
            if all_locations[..i].contains(loc) {
                return domain(format!("location {i} duplicates an earlier location"));
            }
        }
        for (j, e) in eval_points.iter().enumerate() {
            if !e.location.is_finite() || !e.value.is_finite() {
                return domain(format!("evaluation point {j} is not finite"));
            }
            if all_locations.contains(&e.location) {
                return domain(format!("evaluation point {j} coincides with a pool location"));
            }
        }
        Ok(Self {
            all_locations,
            truth,
            eval_points,
            n,
            m: total - n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.eval_points.len()
    }

    /// Pool size `n + m`.
    pub fn len(&self) -> usize {
        self.all_locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all_locations.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.all_locations
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn eval_points(&self) -> &[SensorReading] {
        &self.eval_points
    }

    /// MAE of the network formed by `placed`, without validating it.
    pub(crate) fn score_unchecked(&self, placed: &[usize]) -> f64 {
        let total: f64 = self
            .eval_points
            .iter()
            .map(|e| {
                let est = idw_iter(
                    placed.iter().map(|&i| (&self.all_locations[i], self.truth[i])),
                    &e.location,
                )
                .expect("placement is non-empty");
                (e.value - est).abs()
            })
            .sum();
        total / self.eval_points.len() as f64
    }
}

/// MAE over the evaluation points when sensors sit at `placed` (indices into
/// the instance's location pool).
pub fn score_network(instance: &ProblemInstance, placed: &[usize]) -> Result<f64> {
    if placed.len() != instance.n {
        return domain(format!("expected {} placed indices, got {}", instance.n, placed.len()));
    }
    for (k, &i) in placed.iter().enumerate() {
        if i >= instance.len() {
            return domain(format!("placed index {i} out of range 0..{}", instance.len()));
        }
        if placed[..k].contains(&i) {
            return domain(format!("placed index {i} repeated"));
        }
    }
    Ok(instance.score_unchecked(placed))
}
