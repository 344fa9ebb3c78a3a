//! Monte Carlo learning of discrete-time hedging strategies under
//! exponential utility.
//!
//! The learner runs a backward dynamic program over simulated market paths,
//! fitting each rebalance rule in a finite basis by minimizing an empirical
//! exponential objective. Its by-products are certainty-equivalent values and
//! indifference prices. The geometric Brownian motion market, where all of
//! these are known in closed form, serves as the reference.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod analytic;
pub mod basis;
pub mod claims;
pub mod error;
pub mod experiment;
pub mod market_sim;
pub mod optimizer;
pub mod pricing;
pub mod risk;

pub use allocation::{apply, learn, LearnOptions, Strategy, StrategyTable};
pub use analytic::{bs_put, TheoreticalStrategy};
pub use basis::BasisSet;
pub use claims::Claim;
pub use error::{Error, ErrorKind, Result};
pub use market_sim::{simulate_gbm, MarketParams, PathSet, SimConfig};
pub use optimizer::{minimize, ObjectiveData, OptimResult, OptimStatus, SolverOptions};
pub use pricing::{indifference_price, price_from_expected_utilities, PricingResult, Side};
pub use risk::{report, RiskReport};
