//! File formats and the command-line workflow around `psgmae-core`: EDF /
//! EDF+ reading and writing, the epoch cache, checkpoints, configuration
//! and metrics files, and CSV reports.

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod edf;
pub mod report;
pub mod workflow;

pub use psgmae_core as core;
