//! Shared fixtures for the benchmarks.

use exphedge::{simulate_gbm, MarketParams, PathSet, SimConfig};

/// The reference one-asset market with `steps` weekly-style dates.
pub fn reference_market(steps: usize) -> MarketParams {
    MarketParams::single(0.1, 0.2, 0.0, 1.0, 1.0, steps).expect("valid market")
}

pub fn reference_paths(n_paths: usize, steps: usize) -> PathSet {
    simulate_gbm(&reference_market(steps), &SimConfig::new(n_paths, 1)).expect("simulation")
}
