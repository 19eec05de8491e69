//! Sparse feature selection for binary classification of frequency-response
//! data.
//!
//! The crate fits logistic models with an L1 penalty (one task) or an L2,1
//! penalty (several tasks sharing a sparsity pattern) using a boosted
//! forward/backward coordinate solver, and wraps them in an experiment
//! pipeline: Monte-Carlo expansion of measured spectra, frequency windows,
//! stratified cross-validation, hyperparameter search and transfer to unseen
//! tasks.

// `!(a < b)` comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod model;
pub mod solver;

pub use error::{Error, Result};
pub use model::{LossBreakdown, Standardizer, TaskDataset, WeightMatrix};
pub use solver::{fit, FitResult, SolverConfig, SolverTrace};
