//! Provider-fairness re-ranking for top-K recommendation, with an
//! accuracy, beyond-accuracy and item-exposure evaluation suite.
//!
//! The usual flow is [`dataset`] → [`scorers`] → [`rerank`] → [`metrics`],
//! driven end to end by [`pipeline`] from an [`config::ExperimentConfig`].

pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rerank;
pub mod scorers;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
