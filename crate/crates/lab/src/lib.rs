//! File formats, configuration and the command-line harness around `horolab-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod system;

pub use config::LabConfig;
pub use error::LabError;
