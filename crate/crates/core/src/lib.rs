//! Moisture-content estimation for batch drying processes.
//!
//! The crate covers the whole estimation pipeline:
//!
//! - [`dataset`]: CSV ingestion, gravimetric MC, min-max normalization onto
//!   `[0, 100]`, ICD/ECD handling and a seeded synthetic generator.
//! - [`thinlayer`]: the six semi-empirical drying curves and a
//!   Levenberg-Marquardt fitter with deterministic multi-start.
//! - [`mlp`]: a from-scratch MLP regressor (batch norm, ReLU, inverted
//!   dropout, Adam, early stopping).
//! - [`baselines`]: PLS (NIPALS) and random-forest regression.
//! - [`evaluation`]: metrics, repeated k-fold cross-validation under the
//!   WIC/NIC regimes, and rolling-window MAE curves.
//! - [`hpo`]: search-space sampling and ASHA over inner cross-validation.
//!
//! Data-parallel loops go through [`exec::Exec`]; with the default
//! `parallel` feature they run on rayon, otherwise sequentially. Results are
//! bit-identical either way.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod hpo;
mod linalg;
pub mod mlp;
pub mod models;
pub mod seed;
pub mod thinlayer;

pub use error::{Error, Result};
pub use exec::Exec;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
