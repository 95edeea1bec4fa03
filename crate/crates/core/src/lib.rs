//! Velocity field estimation for transported scalar fields.
//!
//! A scalar field observed over space and time is modelled as a Gaussian
//! process whose covariance compares observations through the particle labels
//! of a learned backward flow. Fitting the flow by maximum likelihood and
//! differentiating it yields the velocity field. A block-matching baseline and
//! synthetic-truth tooling are included for comparison.
//!
//! Module map:
//! - [`autodiff`]: reverse-mode tape over dense matrices, with Cholesky and
//!   triangular-solve adjoints.
//! - [`flow`]: residual-network backward flows and closed-form flows.
//! - [`velocity`]: velocity fields from flows.
//! - [`covariance`]: the flow-warped Matérn covariance.
//! - [`estimation`]: likelihood, penalty, Adam and the fitting loop.
//! - [`scenes`]: synthetic scenes, observation files and error metrics.
//! - [`dmw`]: sum-of-squared-differences block matching.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod covariance;
pub mod dmw;
pub mod error;
pub mod estimation;
pub mod flow;
pub mod kv;
pub mod matrix;
pub mod scenes;
pub mod table;
pub mod velocity;

pub use error::{Error, Result};
