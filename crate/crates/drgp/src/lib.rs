//! Operating-system side of the deep recurrent GP toolkit: CSV ingestion,
//! a rayon executor for the map phase, experiment running and reporting.
//!
//! The numerical work lives in [`drgp_core`]; this crate wires it to files,
//! threads and a command line.

pub mod bench;
pub mod check;
pub mod experiment;
pub mod io;
pub mod report;

use std::ops::Range;

use drgp_core::engine::RangeMap;
use rayon::prelude::*;

pub use drgp_core;

/// Name of the environment variable read for the map task count.
pub const WORKERS_ENV: &str = "DRGP_WORKERS";

/// Runs map tasks on the rayon thread pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl RangeMap for Parallel {
    fn map<T, F>(&self, ranges: &[Range<usize>], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        ranges.par_iter().cloned().map(f).collect()
    }
}

/// Number of map tasks: an explicit request wins, then the environment, then
/// the number of available cores.
pub fn worker_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| {
            std::env::var(WORKERS_ENV)
                .ok()
                .and_then(|v| v.trim().parse().ok())
        })
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1)
}
