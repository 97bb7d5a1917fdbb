//! Ranking with the BTL-NMF model.
//!
//! Pairwise win counts `b_ij^(m)` between `N` players across `M` tournaments
//! are explained by a low-rank skill matrix `Lambda = W H`, with `W` a
//! nonnegative tournament-by-factor dictionary and `H` nonnegative
//! factor-by-player skills. The probability that `i` beats `j` in
//! tournament `m` is `Lambda_mi / (Lambda_mi + Lambda_mj)`.
//!
//! [`solver::fit`] maximizes the likelihood by majorization-minimization
//! with a small `eps` added to `H` inside the objective; the objective is
//! non-increasing at every step. [`diagnostics`] checks gradients and
//! stationarity, [`baselines`] fits plain and mixture BTL models on the
//! aggregated data, and [`io`] handles datasets and result files.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod model;
pub mod parallel;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    btl_win_prob, lambda_matrix, neg_log_likelihood, ComparisonTensor, FactorPair, FitResult, Normalization,
    SolverConfig,
};
pub use parallel::Execution;
pub use solver::{fit, multi_restart_fit, multi_restart_fit_with, MultiRestartResult};
