//! File ingestion, configuration, and command orchestration for the model
//! library: fit, compare, predict, rank, and simulate workflows over
//! delimited-text panels and geometry files.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{cmd_compare, cmd_fit, cmd_predict, cmd_rank, cmd_simulate, CmdOutcome};
pub use config::RunConfig;
pub use error::{CliError, ExitCode};
