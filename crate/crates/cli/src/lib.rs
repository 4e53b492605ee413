//! Command-line front end for `mfg-core`: config ingestion, single runs,
//! solver comparisons, maximum-horizon sweeps and CSV/JSON output.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{cmd_compare, cmd_run, cmd_sweep, parse_algorithms, ConfigSource, SweepArgs};
pub use config::{assemble, parse_list, parse_override, RunConfig};
pub use error::{CliError, EXIT_DIVERGED, EXIT_ERROR, EXIT_OK};
