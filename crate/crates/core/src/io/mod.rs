//! File formats, scene ingestion, synthetic scenes and run configuration.

pub mod checkpoint;
pub mod colmap;
pub mod config;
pub mod femb;
pub mod images;
pub mod pfm;
pub mod synth;
