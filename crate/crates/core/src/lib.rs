//! Tick-to-forecast laboratory: timing-enhanced bars, windowed datasets,
//! a Student's-t MLP forecaster and its evaluation suite.

pub mod bars;
pub mod error;
pub mod eval;
pub mod dataset;
pub mod exec;
pub mod experiment;
pub mod features;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod io_util;
pub mod tdist;

pub use error::{Error, Result};
