//! Library side of the `iroco` command: configuration loading and the
//! generate/train/filter/evaluate pipeline.

pub mod commands;
pub mod config;
pub mod pipeline;
