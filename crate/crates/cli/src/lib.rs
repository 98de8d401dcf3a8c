//! Benchmark, segmentation and audit harness for the `convsplit` solvers.

pub mod commands;
pub mod config;
pub mod diag;
pub mod output;
pub mod runner;
