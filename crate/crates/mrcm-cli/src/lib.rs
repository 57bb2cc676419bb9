//! Experiment orchestration for the MRCM laboratory: configuration
//! ingestion, command dispatch, reproducibility manifests and tabular
//! output. The `mrcm` binary is a thin wrapper around [`run`].

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::Path;

pub use commands::{run_command, RunOutcome, RunStatus};
pub use config::{parse_config, CommandParams, ConfigError, RunConfig};

/// Process exit codes of the binary.
pub mod exit_codes {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const BOUND_VIOLATED: i32 = 3;
    pub const RESOURCE_REFUSAL: i32 = 4;
}

/// Loads a configuration file, applies the worker-count override chain
/// (explicit argument, then MRCM_THREADS, then the config) and runs it.
/// Returns the process exit code.
pub fn run(config_path: &Path, workers_flag: Option<usize>, out_dir: Option<&Path>) -> i32 {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", config_path.display());
            return exit_codes::CONFIG;
        }
    };
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let mut config = match parse_config(&text, base) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return exit_codes::CONFIG;
        }
    };
    if let Some(dir) = out_dir {
        config.out_dir = dir.to_path_buf();
    } else if config.out_dir.is_relative() {
        config.out_dir = base.join(&config.out_dir);
    }
    let env_workers = std::env::var("MRCM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let workers = workers_flag.or(env_workers).unwrap_or(config.workers);

    match run_command(&config, workers) {
        Ok(outcome) => match outcome.status {
            RunStatus::Ok => exit_codes::OK,
            RunStatus::BoundViolated => {
                eprintln!("one or more bounds violated; see bounds.txt");
                exit_codes::BOUND_VIOLATED
            }
        },
        Err(mrcm::Error::ResourceRefusal(msg)) => {
            eprintln!("refused: {msg}");
            exit_codes::RESOURCE_REFUSAL
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            exit_codes::FAILURE
        }
    }
}
