pub mod config;
pub mod error;
pub mod layout;
pub mod manifest;
pub mod plot;
pub mod report;
pub mod stages;

pub use config::{Overrides, RunConfig, ScoreMode};
pub use error::CliError;
pub use layout::Layout;
pub use manifest::{RunManifest, StageRecord};
pub use stages::{execute, run_stage, Stage, PIPELINE};
