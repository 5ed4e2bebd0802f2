//! Label Message Passing (LaMP) networks for multi-label classification.
//!
//! Labels are nodes of a label-interaction graph. Each of `T` steps first
//! passes attention messages from the input feature nodes to every label
//! node (Feature-to-Label), then among label nodes along the graph
//! (Label-to-Label). A sigmoid readout tied to the label embedding table
//! turns every label state into a probability.
//!
//! The crate is `no_std` with `alloc`. File formats, checkpoints and the
//! command-line front end live in the companion `lamp` crate.
//!
//! Module map:
//!
//! * [`autodiff`]: dense tensors and a reverse-mode tape.
//! * [`attention`]: the multi-head attention MPNN block.
//! * [`graph`]: label (and input) interaction graphs.
//! * [`model`] / [`baseline`]: LaMP and the Emb+MLP baseline.
//! * [`loss`], [`metrics`]: training objectives and MLC metrics.
//! * [`data`]: samples, splits and padded batches.
//! * [`train`]: Adam, the training loop and evaluation.
//! * [`explain`]: interpretability records.
#![no_std]

extern crate alloc;

pub mod attention;
pub mod autodiff;
pub mod baseline;
pub mod data;
pub mod error;
pub mod explain;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod real;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use attention::{MpnnBlockParams, NeighborhoodMask};
pub use autodiff::{Graph, Tensor, Var};
pub use baseline::MlpBaseline;
pub use data::{Batch, BatchIter, Dataset, Features, InputKind, Sample, Schema};
pub use error::{LampError, Result};
pub use graph::{GraphMode, InputGraph, LabelGraph};
pub use metrics::{LabelMatrix, Metric, MetricsReport};
pub use model::{ForwardOutput, LampConfig, LampModel, MultiLabelModel, Stage};
pub use params::{ParamId, ParamStore, ParamVars};
pub use real::{Precision, Real};
pub use rng::Rng;
