//! Privacy auctions for weighted linear predictors.
//!
//! An analyst wants to release `s(d) = sum_i w_i d_i` over private entries
//! `d_i` in a known interval and buys differential-privacy loss from the
//! individuals under a budget. This crate provides
//!
//! * the instance model and the budget-payability filter ([`instances`]),
//! * Laplace estimators with exact privacy levels, distortion and privacy
//!   index ([`estimator`]),
//! * the truthful FairInnerProduct mechanism ([`mechanism`]),
//! * the fractional optimum and a brute-force optimum used as benchmarks
//!   ([`optimal`]),
//! * property sweeps for truthfulness, rationality, budget feasibility and
//!   approximation ratio ([`verify`]),
//! * weight derivation for k-NN, Nadaraya-Watson, ridge and kernel
//!   regression predictors ([`predictors`]).

pub mod arith;
pub mod error;
pub mod estimator;
pub mod instances;
pub mod mechanism;
pub mod optimal;
pub mod predictors;
pub mod verify;

pub use arith::{ArithmeticMode, Rational, Scalar};
pub use error::{Error, Result};
pub use estimator::{Dclef, Lef, LinearStatistic, PrivacyIndexResult, PrivacyProfile};
pub use instances::{AuctionInstance, Database, FilterMode, Permutation, ValueInterval};
pub use mechanism::{fair_inner_product, run_auction, AuctionReport, Branch, MechanismOutcome, Rules};
pub use optimal::{brute_force_opt, fractional_optimum, FractionalSolution, OracleSolution};
