//! Continuous prediction of the lead time until a dialogue partner's next
//! speech initiation.

pub mod corpus;
pub mod dsp;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod labels;
pub mod metrics;
pub mod nnet;
pub mod predict;

pub use error::{Error, Result};

/// Tolerance for comparing frame times against event times, in seconds.
pub(crate) const TIME_EPS: f64 = 1e-9;
