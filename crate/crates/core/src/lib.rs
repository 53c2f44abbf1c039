//! Tools for eliciting numeric predictive beliefs from a text oracle and
//! measuring them: reference ambiguity via rejection Monte Carlo, fit and
//! rank-based belief metrics, a fixed-hyperparameter GP control model,
//! sequential-evidence replays, and a small Bayesian-optimization engine.
//!
//! The [`harness`] module ties the pieces into reproducible experiment runs;
//! the `augur` CLI (separate crate) is a thin wrapper over it.

pub mod ambiguity;
pub mod bo;
pub mod elicit;
pub mod families;
pub mod gp;
pub mod harness;
pub mod metrics;
pub mod sequential;

mod error;
pub(crate) mod seeds;

pub use error::{Error, Result};
