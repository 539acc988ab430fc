//! Experiment driver for pilot-efficient channel estimation: dataset and
//! checkpoint formats, configuration, Monte-Carlo sweeps and result tables.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod results;

pub use error::{LabError, Result};
