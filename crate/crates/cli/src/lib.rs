//! Command line front end and `/v1` HTTP service for the evicode engine.

pub mod commands;
pub mod service;

pub use commands::{run, Cli, Failure};
