//! Scenario files and the `solve`, `verify` and `sweep` commands.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
pub mod scenario;

pub use commands::{cmd_solve, cmd_sweep, cmd_verify, load, solve, CliError, SolveOutput, SweepRow};
pub use scenario::{ConfigError, Overrides, Scenario};
