//! Diverse online feature selection.
//!
//! Features arrive in groups over a fixed set of instances. Each group goes
//! through three stages:
//!
//! 1. [`dpp`]: an L-ensemble is built over the already selected features plus
//!    the arriving group, conditioned on the selected ones, and a diverse
//!    subset of the group is sampled.
//! 2. [`criteria`]: sampled features are filtered by a Wilcoxon signed-rank
//!    redundancy test and/or a class-separability (trace ratio) test.
//! 3. [`elasticnet`]: an elastic-net regularized classifier is fit on the
//!    whole selected set and features with small coefficients are dropped.
//!
//! [`pipeline`] drives the loop over a [`data::Dataset`] stream and
//! [`evaluation`] scores the final subset with cross-validated classifiers.

pub mod criteria;
pub mod data;
pub mod dpp;
pub mod elasticnet;
pub mod error;
pub mod evaluation;
pub mod pipeline;
mod stats;

pub use error::{DofsError, Result};
