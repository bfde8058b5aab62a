//! Command line front end for `affine-hilbert`: parameter files, CSV and
//! JSON artifacts, run manifests and a rayon path runner.

pub mod cli;
pub mod commands;
pub mod error;
pub mod format;
pub mod manifest;
pub mod output;
pub mod runner;

pub use commands::main_with;
pub use error::CliError;
pub use runner::Rayon;
