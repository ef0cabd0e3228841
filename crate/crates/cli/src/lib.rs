//! Configuration-driven experiment runner for the ttopt workspace.
//!
//! The library half parses flat `key = value` config files and dispatches to
//! the experiment drivers; the `ttopt` binary is a thin clap wrapper so tests
//! can drive everything in-process.

pub mod config;
pub mod experiments;

pub use config::{defaults, print_defaults, Config, KINDS};
pub use experiments::run_experiment;
