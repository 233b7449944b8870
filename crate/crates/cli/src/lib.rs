//! Command-line orchestration of the de-identification pipeline: masking,
//! latent optimization and merging, plus metrics, attack evaluation and
//! lambda sweeps. Every de-identification run writes a manifest it can be
//! replayed from.

pub mod cli;
pub mod config;
pub mod manifest;
pub mod models;
pub mod pipeline;

pub use cli::{exit_code, run, Cli, UsageError};
pub use config::Config;
