//! Experiment files, sweeps and result files for the `ssc-mpc` binary.

pub mod config;
pub mod experiment;
pub mod svg;

pub use config::{parse_config, parse_config_relative, parse_scenario, ExperimentSpec, ScenarioChoice};
pub use experiment::{report_csv, run_experiment, ExperimentOutcome, SweepRow, REPORT_HEADER};

use ssc_mpc::Error;

/// Process exit code for a library error: 2 for invalid configuration,
/// 3 for file system failures, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. } | Error::Config(_) | Error::Domain(_) | Error::InvalidManeuver(_) => 2,
        Error::Io { .. } => 3,
        Error::Generation { .. } => 1,
    }
}
