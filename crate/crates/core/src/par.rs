//! Order-preserving fan-out.
//!
//! Results always come back in index order and are folded by the caller in
//! that order, so output is identical for any worker count.

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};

pub struct Workers {
    pool: Option<ThreadPool>,
}

impl Workers {
    /// `count <= 1` runs everything on the calling thread.
    pub fn new(count: usize) -> Result<Self> {
        if count <= 1 {
            return Ok(Self { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build()
            .map_err(|e| Error::Runtime(format!("cannot start {count} workers: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn sequential() -> Self {
        Self { pool: None }
    }

    pub fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..len).map(f).collect(),
            Some(pool) => pool.install(|| (0..len).into_par_iter().map(&f).collect()),
        }
    }

    /// Like [`Workers::map`] over mutable items.
    pub fn map_mut<I, T, F>(&self, items: &mut [I], f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(usize, &mut I) -> T + Sync + Send,
    {
        match &self.pool {
            None => items.iter_mut().enumerate().map(|(i, x)| f(i, x)).collect(),
            Some(pool) => pool.install(|| items.par_iter_mut().enumerate().map(|(i, x)| f(i, x)).collect()),
        }
    }
}

/// Collects a vector of results, returning the first error in index order.
pub fn collect_ordered<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}
