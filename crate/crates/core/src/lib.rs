//! Small Bayesian neural-network classifiers trained with out-of-distribution
//! aware likelihoods.
//!
//! The crate trains multilayer perceptrons under MAP, last-layer mean-field
//! variational Bayes or a diagonal Laplace approximation, using one of five
//! likelihoods (plain Categorical, an extra none class, Dirichlet soft labels,
//! mixed hard/soft labels, or the outlier-exposure loss read as a tempered
//! Categorical likelihood over label-replicated outliers). Evaluation covers
//! accuracy, ECE, Brier, MMC, FPR@95TPR, AUROC and AUPRC.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod likelihoods;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod special;

pub use error::{Error, Result};
pub use matrix::Matrix;
