//! Configuration, dataset ingestion, artifact writing and the subcommands
//! behind the `ulisse-gp` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod io;
pub mod manifest;

pub use config::ExperimentConfig;
pub use data::load_dataset;
pub use manifest::Manifest;
