//! Simulation and optimisation of discretely rebalanced delta hedges.
//!
//! The crate simulates the underlying on a fine grid, rebalances a
//! Black-Scholes delta hedge according to hitting-time rules, compares the
//! renormalized hedging error with its small-scale limit, and solves the
//! linear-quadratic problem behind the expectation-optimal barriers.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod delta_hedge;
pub mod harness;
pub mod limit_theory;
pub mod lq_riccati;
pub mod process_sim;
pub mod rules;
pub mod stats;
