//! Library surface of the pipeline runner, used by the binary and by the
//! acceptance suite.

pub mod commands;
pub mod config;
pub mod rundir;
