//! Command-line pipeline around `dcd-core`: configuration, checkpoints,
//! CSV and pixmap outputs, and the `train → finetune → sample → evaluate`
//! stages.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;

pub use checkpoint::{Checkpoint, CheckpointError, Metadata, FORMAT_VERSION};
pub use config::{Experiment, Overrides};
pub use error::CliError;
