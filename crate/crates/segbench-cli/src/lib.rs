//! Library surface of the `segbench` binary: config parsing, run/sweep
//! execution, result-directory rendering, and SVG plots.

pub mod config;
pub mod report;
pub mod runner;
pub mod svg;
