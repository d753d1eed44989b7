//! Fairness auditing for spatial-temporal mobility data.
//!
//! The toolkit quantifies trajectory similarity two ways — structural
//! similarity (SSIM) of visit-frequency heatmaps and four trajectory
//! entropies — then evaluates whether privacy-utility trade-off models
//! treat similar users similarly (individual fairness) and whether
//! demographic subgroups receive comparable outcomes (group fairness,
//! four-fifths rule).
//!
//! Data flows in as per-user trajectories (CSV or Geolife PLT), per-user
//! model outcomes, and optional demographics; reports flow out as JSON,
//! CSV bundles, or aligned text tables.

pub mod entropy;
pub mod error;
pub mod fairness;
pub mod grid;
pub mod ingest;
pub mod matrix;
pub mod report;
pub mod similarity;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
