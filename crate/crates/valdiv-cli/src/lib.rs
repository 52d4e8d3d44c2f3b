//! Library half of the `valdiv` binary: configuration, deterministic
//! output writing, and one module per subcommand. Kept as a library so
//! integration tests can drive the same code paths the binary does.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
