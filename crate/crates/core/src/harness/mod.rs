//! Configuration, orchestration of the convergence experiment, and
//! deterministic output files with a manifest.

pub mod config;
pub mod converge;
pub mod emit;

pub use config::{load_config, parse_config, RunConfig};
pub use converge::{run_convergence, ConvergenceReport, DistanceRow, ResidualRow};
pub use emit::{git_describe, sha256_hex, Manifest, OutputDir};
