//! Benchmark problem families.

pub mod gl;
pub mod image;
pub mod quartic;
pub mod scad;
