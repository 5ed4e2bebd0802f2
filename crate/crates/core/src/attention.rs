//! Multi-head attention message passing block.
//!
//! One block realises a message function and an update function over a
//! bipartite receiver/sender node set:
//!
//! ```text
//! e[k]   = (R·Wq[k]) (S·Wu[k])ᵀ / √d           per head k, Wq[k], Wu[k]: d×(d/K)
//! α[k]   = masked_softmax(e[k], N)
//! attn   = (α[1]·S·Wv[1] ‖ … ‖ α[K]·S·Wv[K]) · Wc
//! mlp(h) = ReLU(h·Wr + b1)·Wb + b2
//! ```
//!
//! The per-head matrices are column blocks of one `d×d` matrix. All matrices
//! are applied on the right of row-vector node states. [`MpnnBlockParams::step`]
//! wraps both sublayers in dropout, residual and post-norm layer
//! normalisation.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::{Graph, Var, LAYER_NORM_EPS};
use crate::error::{LampError, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::real::Real;
use crate::rng::Rng;

/// `mask[b][r][c]` is true when sender `c` is a neighbour of receiver `r`
/// in batch item `b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodMask {
    batch: usize,
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl NeighborhoodMask {
    pub fn new(batch: usize, rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != batch * rows * cols {
            return Err(LampError::dim(
                "neighborhood_mask",
                format!("{} entries for {}×{}×{}", data.len(), batch, rows, cols),
            ));
        }
        Ok(NeighborhoodMask { batch, rows, cols, data })
    }

    pub fn full(batch: usize, rows: usize, cols: usize) -> Self {
        NeighborhoodMask { batch, rows, cols, data: alloc::vec![true; batch * rows * cols] }
    }

    pub fn from_fn(batch: usize, rows: usize, cols: usize, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(batch * rows * cols);
        for b in 0..batch {
            for r in 0..rows {
                for c in 0..cols {
                    data.push(f(b, r, c));
                }
            }
        }
        NeighborhoodMask { batch, rows, cols, data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.rows, self.cols)
    }

    pub fn get(&self, b: usize, r: usize, c: usize) -> bool {
        self.data[(b * self.rows + r) * self.cols + c]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Same mask repeated per head, laid out `[B, K, R, C]` to match
    /// [`Graph::split_heads`].
    pub fn per_head(&self, heads: usize) -> Vec<bool> {
        let plane = self.rows * self.cols;
        let mut out = Vec::with_capacity(self.data.len() * heads);
        for b in 0..self.batch {
            for _ in 0..heads {
                out.extend_from_slice(&self.data[b * plane..(b + 1) * plane]);
            }
        }
        out
    }
}

/// Learned weights of one attention MPNN block.
#[derive(Clone, Debug, PartialEq)]
pub struct MpnnBlockParams {
    pub d: usize,
    pub heads: usize,
    /// Query projection `W^q`.
    pub wq: ParamId,
    /// Key projection `W^u`.
    pub wu: ParamId,
    /// Value projection `W^v`.
    pub wv: ParamId,
    /// Head-concatenation output projection `W^c`.
    pub wc: ParamId,
    pub wr: ParamId,
    pub b1: ParamId,
    pub wb: ParamId,
    pub b2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl MpnnBlockParams {
    /// Registers a block's tensors under `prefix`. Matrices are Glorot-uniform,
    /// biases zero, layer-norm gains one.
    pub fn init<T: Real>(store: &mut ParamStore<T>, prefix: &str, d: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if d == 0 || heads == 0 || !d.is_multiple_of(heads) {
            return Err(LampError::param("heads", format!("width {} is not divisible into {} heads", d, heads)));
        }
        let mut mat = |name: &str| store.add_glorot(format!("{prefix}.{name}"), d, d, rng);
        let wq = mat("wq");
        let wu = mat("wu");
        let wv = mat("wv");
        let wc = mat("wc");
        let wr = mat("wr");
        let wb = mat("wb");
        let vec = |store: &mut ParamStore<T>, name: &str, v: f64| store.add_const(format!("{prefix}.{name}"), &[d], v);
        Ok(MpnnBlockParams {
            d,
            heads,
            wq,
            wu,
            wv,
            wc,
            wr,
            wb,
            b1: vec(store, "b1", 0.0),
            b2: vec(store, "b2", 0.0),
            ln1_gain: vec(store, "ln1_gain", 1.0),
            ln1_bias: vec(store, "ln1_bias", 0.0),
            ln2_gain: vec(store, "ln2_gain", 1.0),
            ln2_bias: vec(store, "ln2_bias", 0.0),
        })
    }

    fn check_nodes<T: Real>(&self, g: &Graph<T>, op: &'static str, nodes: Var) -> Result<(usize, usize)> {
        match g.shape(nodes) {
            [b, n, d] if *d == self.d => Ok((*b, *n)),
            s => Err(LampError::dim(op, format!("nodes {:?}, block width {}", s, self.d))),
        }
    }

    /// Unnormalised scores `[B·K, R, C]`; head `k` of batch item `b` is slab `b·K + k`.
    pub fn attention_scores<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, receivers: Var, senders: Var) -> Result<Var> {
        let (br, _) = self.check_nodes(g, "attention_scores", receivers)?;
        let (bs, _) = self.check_nodes(g, "attention_scores", senders)?;
        if br != bs {
            return Err(LampError::dim("attention_scores", format!("batch {} vs {}", br, bs)));
        }
        let q = g.matmul(receivers, pv[self.wq])?;
        let k = g.matmul(senders, pv[self.wu])?;
        let qh = g.split_heads(q, self.heads)?;
        let kh = g.split_heads(k, self.heads)?;
        let e = g.bmm(qh, kh, true)?;
        g.scale(e, 1.0 / Float::sqrt(self.d as f64))
    }

    /// Attention sublayer before its residual: returns the projected head
    /// concatenation `[B, R, d]` and the attention weights `[B·K, R, C]`.
    pub fn attention_core<T: Real>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        receivers: Var,
        senders: Var,
        mask: &NeighborhoodMask,
    ) -> Result<(Var, Var)> {
        let (b, r) = self.check_nodes(g, "attend_messages", receivers)?;
        let (_, c) = self.check_nodes(g, "attend_messages", senders)?;
        if mask.dims() != (b, r, c) {
            return Err(LampError::dim("attend_messages", format!("mask {:?} for {}×{}×{}", mask.dims(), b, r, c)));
        }
        let e = self.attention_scores(g, pv, receivers, senders)?;
        let alpha = g.masked_softmax(e, &mask.per_head(self.heads))?;
        let v = g.matmul(senders, pv[self.wv])?;
        let vh = g.split_heads(v, self.heads)?;
        let heads = g.bmm(alpha, vh, false)?;
        let merged = g.merge_heads(heads, self.heads)?;
        let projected = g.matmul(merged, pv[self.wc])?;
        Ok((projected, alpha))
    }

    /// Messages `m = receivers + attention_core(...)` and the attention weights.
    pub fn attend_messages<T: Real>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        receivers: Var,
        senders: Var,
        mask: &NeighborhoodMask,
    ) -> Result<(Var, Var)> {
        let (projected, alpha) = self.attention_core(g, pv, receivers, senders, mask)?;
        Ok((g.add(receivers, projected)?, alpha))
    }

    /// `ReLU(h·Wr + b1)·Wb + b2`, without residual.
    pub fn mlp_core<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, h: Var) -> Result<Var> {
        self.check_nodes(g, "mlp_update", h)?;
        let a = g.matmul(h, pv[self.wr])?;
        let a = g.add_bias(a, pv[self.b1])?;
        let a = g.relu(a)?;
        let o = g.matmul(a, pv[self.wb])?;
        g.add_bias(o, pv[self.b2])
    }

    /// `m + mlp_core(m)`.
    pub fn mlp_update<T: Real>(&self, g: &mut Graph<T>, pv: &ParamVars, messages: Var) -> Result<Var> {
        let o = self.mlp_core(g, pv, messages)?;
        g.add(messages, o)
    }

    /// One full message-passing update:
    ///
    /// ```text
    /// h   = LN1(receivers + Dropout(attention_core(receivers, senders)))
    /// out = LN2(h + Dropout(mlp_core(h)))
    /// ```
    #[allow(clippy::too_many_arguments)]
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        receivers: Var,
        senders: Var,
        mask: &NeighborhoodMask,
        dropout_p: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<(Var, Var)> {
        let (attn_out, alpha) = self.attention_core(g, pv, receivers, senders, mask)?;
        let attn_out = g.dropout(attn_out, dropout_p, training, rng)?;
        let h = g.add(receivers, attn_out)?;
        let h = g.layer_norm(h, pv[self.ln1_gain], pv[self.ln1_bias], LAYER_NORM_EPS)?;
        let mlp_out = self.mlp_core(g, pv, h)?;
        let mlp_out = g.dropout(mlp_out, dropout_p, training, rng)?;
        let out = g.add(h, mlp_out)?;
        let out = g.layer_norm(out, pv[self.ln2_gain], pv[self.ln2_bias], LAYER_NORM_EPS)?;
        Ok((out, alpha))
    }
}
