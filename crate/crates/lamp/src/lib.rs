//! File formats, checkpoints, exports and the command-line front end for
//! LaMP networks. The model itself lives in `lamp-core`.
//!
//! * [`dataset`]: line-oriented dataset and schema files.
//! * [`edgelist`]: label and input graph edge lists.
//! * [`checkpoint`]: versioned binary checkpoints with a checksum.
//! * [`report`]: metric reports and training logs.
//! * [`export`]: explain traces (JSON) and heatmaps (SVG).
//! * [`config`]: `key=value` configuration files.
//! * [`cli`]: the `lamp` command.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod edgelist;
pub mod error;
pub mod export;
pub mod report;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
