//! File formats, checkpoints and the pipeline behind the `gestdiff` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod features;
pub mod manifest;
pub mod report;
pub mod transcript;
