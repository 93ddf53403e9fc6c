//! Command-line orchestration for speclab experiments: configuration,
//! experiment dispatch, the phase-map sweep and result files.

pub mod config;
pub mod experiments;
pub mod output;
pub mod scan;

use std::path::{Path, PathBuf};

use speclab_core::Error;

pub use config::{Experiment, ExperimentConfig};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const PARTIAL: i32 = 4;
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        exit::VALIDATION
    } else {
        exit::NUMERICAL
    }
}

/// Run a parsed configuration and write its artifacts under `out`.
pub fn execute(cfg: &ExperimentConfig, out: &Path) -> (i32, Option<Error>) {
    let result = experiments::run(cfg);
    let (code, outcome, err) = match result {
        Ok(o) => (if o.partial { exit::PARTIAL } else { exit::OK }, Some(o), None),
        Err(e) => (exit_code(&e), None, Some(e)),
    };
    match output::write_outputs(out, cfg, outcome.as_ref(), err.as_ref()) {
        Ok(_) => (code, err),
        Err(w) => (exit::NUMERICAL, Some(err.unwrap_or(w))),
    }
}

/// Output directory: explicit flag, else the config's `output_dir`.
pub fn output_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.unwrap_or_else(|| cfg.output_dir.clone())
}
