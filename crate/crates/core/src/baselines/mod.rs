//! Baseline regressors: partial least squares and random forests.

pub mod forest;
pub mod pls;

pub use forest::{rfr_fit, rfr_predict, ForestModel, ForestParams, Node};
pub use pls::{pls_fit, pls_predict, PlsModel};
