//! Cohort pipeline around the `motion_atlas` core: manifest and config
//! handling, cached stage execution over a run directory, and report output.

pub mod cache;
pub mod config;
mod error;
pub mod manifest;
pub mod phantom_gen;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use error::{CliError, Result, StageContext};
