//! Blind source separation with a similarity-matching ICA network.
//!
//! The crate contains the offline and streaming similarity-matching ICA
//! learners, the FOBI procedure they reduce to, five classical online ICA
//! baselines, and the data/metric plumbing used to benchmark them.

pub mod baselines;
pub mod data;
pub mod error;
pub mod fobi;
pub mod linalg;
pub mod metrics;
pub mod smica;
pub mod stream;

pub use error::{Error, Result};
pub use linalg::SignalMatrix;
