//! Finite-size decoy-state analysis for biased-basis BB84 with up to five
//! sources: photon-number statistics, a fiber channel model, fluctuation
//! bounds, worst-case key rates and a parameter optimizer.

// `!(x > 0.0)` is used throughout to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod decoy;
pub mod error;
pub mod keyrate;
pub mod optimizer;
pub mod search;
pub mod sources;
pub mod stats;

pub use config::{AnalysisConfig, ErrorYieldBound};
pub use error::{Error, Result};
