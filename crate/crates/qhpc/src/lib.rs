//! File formats and command-line front-end for the `qhpc-core` simulator:
//! scenario loading, trace reports and the `qhpc` binary's commands.

pub mod cli;
pub mod report;
pub mod scenario;

pub use scenario::{load, Loaded, ScenarioError};
