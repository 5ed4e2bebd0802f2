//! Dense tensors and reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every primitive appends one node holding its value,
//! the operands it read and whatever it saved for its backward rule. Because
//! nodes are only ever appended, the tape is topologically ordered by
//! construction and [`Graph::backward`] is a single reverse sweep.
//!
//! Broadcasting is deliberately narrow: elementwise binary ops accept equal
//! shapes or a single-element right operand. Row-bias addition, batch tiling
//! and head splitting are separate primitives with their own backward rules.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, max_relative_error};
pub use kernels::{gemm_nn, gemm_nt, gemm_tn};
pub use tape::{Graph, Var};
pub use tensor::Tensor;

/// Variance epsilon used by layer normalisation throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;
