//! Experiment harness: TOML configuration with dotted-key overrides,
//! deterministic artifact files (JSONL run logs, JSON summaries, CSV tables),
//! a self-describing binary parameter format, and the CLI commands.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod params_io;

pub use error::HarnessError;
