use alloc::boxed::Box;
use alloc::string::String;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LampError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A receiver row had no unmasked sender, so attention is undefined.
    #[error("degenerate neighborhood in {op}: row {row} has no unmasked entries")]
    DegenerateNeighborhood { op: &'static str, row: usize },

    #[error("invalid parameter {name}: {detail}")]
    Parameter { name: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Wraps an error with the model stage (e.g. `"1.2"`, `"fmp.0"`, `"loss"`) it came from.
    #[error("at stage {stage}: {inner}")]
    AtStage { stage: String, inner: Box<LampError> },
}

impl LampError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        LampError::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn param(name: &'static str, detail: impl Into<String>) -> Self {
        LampError::Parameter { name, detail: detail.into() }
    }

    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        LampError::AtStage { stage: stage.into(), inner: Box::new(self) }
    }

    /// The innermost error, with all stage wrappers removed.
    pub fn root(&self) -> &LampError {
        match self {
            LampError::AtStage { inner, .. } => inner.root(),
            other => other,
        }
    }
}

pub type Result<T, E = LampError> = core::result::Result<T, E>;
