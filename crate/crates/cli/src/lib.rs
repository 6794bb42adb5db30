//! Experiment runner for the radial defocusing NLS on the Schwarzschild
//! exterior. The binary is a thin wrapper over [`execute`].

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod report;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use experiments::{RunError, Setup};
pub use report::{Check, Report};

fn load(path: &Path) -> Result<Setup, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::parse(&text).map_err(|e| RunError::Config(e.to_string()))?;
    Setup::new(cfg)
}

/// Runs the experiment in `path`, writes `summary.txt` and returns the report.
pub fn execute(path: &Path) -> Result<Report, RunError> {
    let setup = load(path)?;
    let report = experiments::run(&setup)?;
    let out = setup.cfg.output_dir.join("summary.txt");
    let f = File::create(&out).map_err(|e| RunError::Config(format!("{}: {e}", out.display())))?;
    report
        .write(BufWriter::new(f))
        .map_err(|e| RunError::Config(format!("{}: {e}", out.display())))?;
    Ok(report)
}

/// Parses the config and runs the guard checks without evolving anything.
pub fn validate(path: &Path) -> Result<Vec<String>, RunError> {
    let setup = load(path)?;
    experiments::validate(&setup)
}

/// Reads `TORTOISE_NLS_THREADS`. Unset means no cap.
pub fn thread_cap() -> Result<Option<usize>, RunError> {
    match std::env::var("TORTOISE_NLS_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(RunError::Config(format!("TORTOISE_NLS_THREADS: {e}"))),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(RunError::Config(format!("TORTOISE_NLS_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}
