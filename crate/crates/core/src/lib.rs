//! Flood-risk capitalization in housing markets: ingest, spatial tagging,
//! awareness, fixed-effects estimation, diagnostics and synthetic data.

pub mod awareness;
pub mod designs;
pub mod diagnostics;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod solver;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
