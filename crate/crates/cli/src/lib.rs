//! Run configuration, run-directory artifacts and the subcommands behind the
//! `ratlab` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{
    cmd_diagnose, cmd_eval, cmd_gen_data, cmd_grad_check, cmd_oracles, cmd_train, GenSpec, Manifest, TrainOutcome,
};
pub use config::{DataSource, RunConfig, OUTPUT_ROOT_ENV};

/// Bad input: config, spec, or missing artifacts. Exit code 1.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

/// Non-finite values during compute, or a failed numerical check. Exit code 2.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.is::<NumericalFailure>() || e.downcast_ref::<ratlab_core::Error>().is_some_and(ratlab_core::Error::is_numerical)
    });
    if numerical {
        2
    } else {
        1
    }
}
