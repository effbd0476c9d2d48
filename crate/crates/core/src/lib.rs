//! Conformal prediction for hidden Markov models.
//!
//! A fully observed calibration path `(x_t, y_t)` is treated as a draw from a
//! mixture of Markov chains on augmented states. Such a path can be cut into
//! blocks that start at every occurrence of its final `(state, observation)`
//! pair; the complete blocks are exchangeable, and permuting them gives
//! randomizations of the path with the same probability. Ranking the
//! conformity score of the observed path among its block permutations yields
//! prediction sets over hidden state sequences with finite-sample coverage.
//!
//! The crate is `no_std` (it needs `alloc`). IO, file formats, the Monte-Carlo
//! harness and the command line live in the `hmmcp` crate.
//!
//! Module map:
//!
//! - [`hmm`]: parameters, simulation, count estimates, the forward filter and a
//!   path-enumeration oracle for it.
//! - [`exchangeability`]: block partitions, tail-arrangement permutation sets,
//!   partial exchangeability checks.
//! - [`conformal`]: conformity scores, quantiles, the prediction-set engine and
//!   the classical exchangeable baseline.
//! - [`presets`]: the two- and three-state simulation models.
//! - [`discretize`]: standard-deviation bands, gain/loss states, lagged HMMs.
//! - [`backtest`]: rolling one-step-ahead evaluation on discretized series.
//! - [`trial`]: a single seeded Monte-Carlo coverage trial.
//! - [`rng`]: the seeded generator and per-iteration seed derivation.

#![no_std]

extern crate alloc;

pub mod backtest;
pub mod conformal;
pub mod discretize;
pub mod error;
pub mod exchangeability;
pub mod hmm;
pub mod presets;
pub mod rng;
pub mod trial;

pub use error::{Error, Result};
pub use hmm::{AugmentedSequence, HmmParams, Pair, ProbVector};
