//! Configuration, persistence, and plotting: the reproducible front door
//! used by the command-line interface.

pub mod config;
pub mod csvio;
pub mod record;
pub mod svg;

pub use config::{default_config_text, resolve, ConfigMap, Experiment, TaskKind};
pub use record::{RunRecord, SeedMetric};
