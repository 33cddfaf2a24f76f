//! File formats, model persistence, the benchmark harness and the command line
//! around [`arbp_core`].
//!
//! * [`table`]: headered numeric CSV input and output.
//! * [`config`]: run configuration (JSON), shared by every subcommand.
//! * [`model_file`]: the versioned JSON model container.
//! * [`benchmark`]: seeded repeated train/test runs with a structured report.
//! * [`synthetic`]: toy datasets for demonstrations and tests.

pub mod benchmark;
pub mod config;
mod error;
pub mod model_file;
pub mod synthetic;
pub mod table;

pub use error::{exit, Error, Result};

/// Environment variable giving the default number of parallel benchmark runs.
pub const THREADS_ENV: &str = "ARBP_THREADS";

/// Parallel runs requested through [`THREADS_ENV`], defaulting to one.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}
