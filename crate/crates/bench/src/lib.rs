//! Shared fixtures for the criterion benchmarks under `benches/`.

use std::path::Path;

use placeopt_core::spatial::io::{read_field, read_polygon};
use placeopt_core::spatial::{generate_instance, ProblemInstance};

/// Instance drawn from the bundled synthetic field and region.
pub fn instance(n: usize, m: usize, q: usize, seed: u64) -> ProblemInstance {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let field = read_field(&data.join("field.csv")).expect("bundled field parses");
    let poly = read_polygon(&data.join("region.txt")).expect("bundled region parses");
    generate_instance(&field, &poly, n, m, q, seed).expect("bundled data yields instances")
}
