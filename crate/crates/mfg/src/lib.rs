//! Command-line runner for the mean-field game solver: JSON configuration,
//! run directories with manifests, CSV/JSON outputs and a rayon executor.
//!
//! Every run draws all randomness from one 64-bit master seed through the
//! named streams of [`mfg_core::rng::streams`].

pub mod commands;
pub mod config;
pub mod exec;
pub mod rundir;

pub use commands::{run, Command, RunOptions, RunOutcome};
pub use config::RunConfig;
pub use exec::RayonExecutor;
