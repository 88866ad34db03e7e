//! Command-line front end: run configuration, image files, the phantom
//! generator and the `phantom` / `degrade` / `train` / `infer` / `eval`
//! commands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod image_io;
pub mod phantom;

pub use error::CliError;
