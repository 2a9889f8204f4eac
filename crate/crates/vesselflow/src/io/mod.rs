//! Configuration, boundary signals, probes and CSV output.

pub mod config;
pub mod output;
pub mod signal;
