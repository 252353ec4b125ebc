//! Covariate balancing weights and weight-modified kernel ridge regression
//! for estimating the causal effect of a functional treatment.
//!
//! The estimator works in two stages. First, sample weights are obtained by
//! minimizing a convex worst-case covariate-imbalance criterion over an RKHS
//! ball, which reduces to a spectral-norm objective over box-constrained
//! weights. Second, a kernel ridge regression is fit to the weight-adjusted
//! responses `w_i Y_i`, yielding an estimate of the effect function
//! `tau(a)` over functional treatments `a` (dense trajectories or kernel
//! mean embeddings of sample sets).
//!
//! Entry points:
//! - [`tuning::fit_cfb`] runs the full pipeline on data;
//! - [`simulate::run_study`] runs the replicate simulation harness;
//! - the `funcbal` binary exposes `simulate`, `fit`, `weights`, `predict`
//!   and `selftest` subcommands;
//! - the `examples/` directory has one runnable example per capability.

pub mod balance;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod funcrep;
pub mod gram;
pub mod io;
pub mod kernels;
pub mod krr;
pub mod model;
pub mod simulate;
pub mod tuning;

pub use error::{Error, Result};
