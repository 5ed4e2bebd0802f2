use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::error::{LampError, Result};
use crate::real::Real;
use crate::rng::Rng;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    AddBias(Var, Var),
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var, heads: usize },
    MaskedSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Dropout { x: Var, keep: Vec<T> },
    Gather { table: Var, ids: Vec<usize>, weights: Option<Vec<T>> },
    Tile { x: Var, reps: usize },
    RowDot { u: Var, w: Var },
    MaskedMean { x: Var, mask: Vec<bool> },
    Reshape(Var),
    Sum(Var),
    Bce { p: Var, targets: Vec<T>, eps: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Append-only tape of primitive applications.
///
/// One graph per forward pass. Leaves created with `requires_grad` receive
/// gradients on [`Graph::backward`]; repeated backward calls accumulate into
/// the same buffers until [`Graph::zero_grad`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(LampError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    // ---------------------------------------------------------------------
    // elementwise

    /// `a + b`; shapes must match or one side must hold a single element.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order_broadcast("add", a, b)?;
        let bv = self.data(b);
        let out: Vec<T> = if bv.len() == 1 && self.value(a).len() != 1 {
            let s = bv[0];
            self.data(a).iter().map(|&x| x + s).collect()
        } else {
            self.data(a).iter().zip(bv).map(|(&x, &y)| x + y).collect()
        };
        let shape = self.shape(a).to_vec();
        self.push("add", Tensor::new(shape, out)?, Op::Add(a, b), &[a, b])
    }

    /// `a ⊙ b`; same broadcasting as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order_broadcast("mul", a, b)?;
        let bv = self.data(b);
        let out: Vec<T> = if bv.len() == 1 && self.value(a).len() != 1 {
            let s = bv[0];
            self.data(a).iter().map(|&x| x * s).collect()
        } else {
            self.data(a).iter().zip(bv).map(|(&x, &y)| x * y).collect()
        };
        let shape = self.shape(a).to_vec();
        self.push("mul", Tensor::new(shape, out)?, Op::Mul(a, b), &[a, b])
    }

    // Puts the full-size operand first.
    fn order_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var)> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sb.len() == 1 {
            Ok((a, b))
        } else if sa.len() == 1 {
            Ok((b, a))
        } else {
            Err(LampError::dim(op, format!("{:?} vs {:?}", sa.shape(), sb.shape())))
        }
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::from_f64(c);
        let out = self.data(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push("scale", Tensor::new(shape, out)?, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.data(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let shape = self.shape(a).to_vec();
        self.push("relu", Tensor::new(shape, out)?, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push("sigmoid", Tensor::new(shape, out)?, Op::Sigmoid(a), &[a])
    }

    // ---------------------------------------------------------------------
    // linear algebra

    /// `a[..., k] · b[k, n] -> [..., n]`. Leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(LampError::dim("matmul", format!("{:?} · {:?}", sa, sb)));
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).len() / k.max(1);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        self.push("matmul", Tensor::new(shape, out)?, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product `a[N, m, k] · b[N, k, n]`, or `a · bᵀ` with
    /// `b[N, n, k]` when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bad = || LampError::dim("bmm", format!("{:?} · {:?} (transpose_b={})", sa, sb, transpose_b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b {
            if sb[2] != k {
                return Err(bad());
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(bad());
            }
            sb[2]
        };
        let mut out = vec![T::zero(); batch * m * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for i in 0..batch {
            let a_i = &ad[i * m * k..(i + 1) * m * k];
            let b_i = &bd[i * k * n..(i + 1) * k * n];
            let c_i = &mut out[i * m * n..(i + 1) * m * n];
            if transpose_b {
                gemm_nt(a_i, b_i, c_i, m, k, n);
            } else {
                gemm_nn(a_i, b_i, c_i, m, k, n);
            }
        }
        self.push("bmm", Tensor::new([batch, m, n], out)?, Op::BatchMatMul { a, b, transpose_b }, &[a, b])
    }

    /// Adds a `[n]` bias to every row of `x[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(bias) != [n] {
            return Err(LampError::dim("add_bias", format!("{:?} + {:?}", self.shape(x), self.shape(bias))));
        }
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("add_bias", Tensor::new(shape, out)?, Op::AddBias(x, bias), &[x, bias])
    }

    /// `[B, R, d] -> [B·heads, R, d/heads]`; head `k` takes columns `k·d/heads..`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || heads == 0 || !s[2].is_multiple_of(heads) {
            return Err(LampError::dim("split_heads", format!("{:?} into {} heads", s, heads)));
        }
        let (b, r, d) = (s[0], s[1], s[2]);
        let dk = d / heads;
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for bi in 0..b {
            for ri in 0..r {
                let row = &src[(bi * r + ri) * d..(bi * r + ri + 1) * d];
                for k in 0..heads {
                    let dst = ((bi * heads + k) * r + ri) * dk;
                    out[dst..dst + dk].copy_from_slice(&row[k * dk..(k + 1) * dk]);
                }
            }
        }
        self.push("split_heads", Tensor::new([b * heads, r, dk], out)?, Op::SplitHeads { x, heads }, &[x])
    }

    /// Inverse of [`Graph::split_heads`]: `[B·heads, R, dk] -> [B, R, heads·dk]`.
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || heads == 0 || !s[0].is_multiple_of(heads) {
            return Err(LampError::dim("merge_heads", format!("{:?} from {} heads", s, heads)));
        }
        let (bk, r, dk) = (s[0], s[1], s[2]);
        let b = bk / heads;
        let d = dk * heads;
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for bi in 0..b {
            for k in 0..heads {
                for ri in 0..r {
                    let from = ((bi * heads + k) * r + ri) * dk;
                    let to = (bi * r + ri) * d + k * dk;
                    out[to..to + dk].copy_from_slice(&src[from..from + dk]);
                }
            }
        }
        self.push("merge_heads", Tensor::new([b, r, d], out)?, Op::MergeHeads { x, heads }, &[x])
    }

    // ---------------------------------------------------------------------
    // normalisation and regularisation

    /// Softmax along the last axis restricted to entries where `mask` is true.
    ///
    /// Masked entries come out as exactly zero. Each row is shifted by the
    /// maximum over its unmasked entries before exponentiation. A row with
    /// no unmasked entry is an error rather than a row of NaN.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.len() || t.is_empty() {
            return Err(LampError::dim("masked_softmax", format!("mask of {} for {:?}", mask.len(), t.shape())));
        }
        let c = t.last_dim();
        let mut out = vec![T::zero(); t.len()];
        for (row, ((xr, mr), or)) in t.data().chunks(c).zip(mask.chunks(c)).zip(out.chunks_mut(c)).enumerate() {
            let mut max = T::neg_infinity();
            for (&v, &m) in xr.iter().zip(mr) {
                if m && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                return Err(LampError::DegenerateNeighborhood { op: "masked_softmax", row });
            }
            let mut sum = T::zero();
            for ((o, &v), &m) in or.iter_mut().zip(xr).zip(mr) {
                if m {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            let inv = T::one() / sum;
            for (o, &m) in or.iter_mut().zip(mr) {
                if m {
                    *o *= inv;
                }
            }
        }
        let shape = t.shape().to_vec();
        self.push("masked_softmax", Tensor::new(shape, out)?, Op::MaskedSoftmax(x), &[x])
    }

    /// Normalises each vector along the last axis to zero mean and unit
    /// (biased) variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        if d == 0 || self.value(x).rank() == 0 {
            return Err(LampError::dim("layer_norm", "normalised axis has extent 0"));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(LampError::dim(
                "layer_norm",
                format!("x {:?}, gain {:?}, bias {:?}", self.shape(x), self.shape(gain), self.shape(bias)),
            ));
        }
        let eps = T::from_f64(eps);
        let inv_d = T::one() / T::from_usize(d);
        let (xs, gs, bs) = (self.data(x), self.data(gain), self.data(bias));
        let rows = xs.len() / d;
        let mut xhat = vec![T::zero(); xs.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xs.len()];
        for r in 0..rows {
            let xr = &xs[r * d..(r + 1) * d];
            let mean = xr.iter().copied().sum::<T>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (xr[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gs[j] + bs[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("layer_norm", Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias])
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Identity
    /// otherwise (the input handle is returned unchanged).
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(LampError::param("dropout", format!("rate {} outside [0, 1)", p)));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let scale = T::from_f64(1.0 / (1.0 - p));
        let keep: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < p { T::zero() } else { scale })
            .collect();
        let out = self.data(x).iter().zip(&keep).map(|(&v, &k)| v * k).collect();
        let shape = self.shape(x).to_vec();
        self.push("dropout", Tensor::new(shape, out)?, Op::Dropout { x, keep }, &[x])
    }

    // ---------------------------------------------------------------------
    // indexing and reshaping

    /// Rows of `table[V, d]` selected by `ids`, optionally scaled per row, laid
    /// out as `shape` (whose product must be `ids.len() · d`).
    pub fn gather(&mut self, table: Var, ids: Vec<usize>, weights: Option<Vec<T>>, shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(LampError::dim("gather", format!("table {:?}", ts)));
        }
        let (vocab, d) = (ts[0], ts[1]);
        if shape.iter().product::<usize>() != ids.len() * d || shape.last() != Some(&d) {
            return Err(LampError::dim("gather", format!("{} rows of width {} into {:?}", ids.len(), d, shape)));
        }
        if let Some(w) = &weights {
            if w.len() != ids.len() {
                return Err(LampError::dim("gather", "weights length differs from ids"));
            }
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(LampError::Data(format!("feature id {} outside vocabulary of {}", bad, vocab)));
        }
        let src = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for (r, &id) in ids.iter().enumerate() {
            let row = &src[id * d..(id + 1) * d];
            match &weights {
                Some(w) => out.extend(row.iter().map(|&v| v * w[r])),
                None => out.extend_from_slice(row),
            }
        }
        self.push("gather", Tensor::new(shape.to_vec(), out)?, Op::Gather { table, ids, weights }, &[table])
    }

    /// Stacks `reps` copies of `x` along a new leading axis.
    pub fn tile(&mut self, x: Var, reps: usize) -> Result<Var> {
        let src = self.data(x);
        let mut out = Vec::with_capacity(src.len() * reps);
        for _ in 0..reps {
            out.extend_from_slice(src);
        }
        let mut shape = vec![reps];
        shape.extend_from_slice(self.shape(x));
        self.push("tile", Tensor::new(shape, out)?, Op::Tile { x, reps }, &[x])
    }

    /// `out[b, l] = u[b, l, :] · w[l, :]`: each row of `u` meets its own row of `w`.
    pub fn row_dot(&mut self, u: Var, w: Var) -> Result<Var> {
        let (su, sw) = (self.shape(u), self.shape(w));
        if su.len() != 3 || sw.len() != 2 || su[1] != sw[0] || su[2] != sw[1] {
            return Err(LampError::dim("row_dot", format!("{:?} with {:?}", su, sw)));
        }
        let (b, l, d) = (su[0], su[1], su[2]);
        let (ud, wd) = (self.data(u), self.data(w));
        let mut out = Vec::with_capacity(b * l);
        for bi in 0..b {
            for li in 0..l {
                let o = (bi * l + li) * d;
                out.push(dot(&ud[o..o + d], &wd[li * d..(li + 1) * d]));
            }
        }
        self.push("row_dot", Tensor::new([b, l], out)?, Op::RowDot { u, w }, &[u, w])
    }

    /// Mean over the rows of `x[B, S, d]` whose `mask[b·S + s]` is set.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || mask.len() != s[0] * s[1] {
            return Err(LampError::dim("masked_mean", format!("{:?} with mask of {}", s, mask.len())));
        }
        let (b, n, d) = (s[0], s[1], s[2]);
        let src = self.data(x);
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            let count = mask[bi * n..(bi + 1) * n].iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(LampError::EmptyInput(format!("row {} of masked_mean has no valid entries", bi)));
            }
            let inv = T::one() / T::from_usize(count);
            let dst = &mut out[bi * d..(bi + 1) * d];
            for si in 0..n {
                if mask[bi * n + si] {
                    let row = &src[(bi * n + si) * d..(bi * n + si + 1) * d];
                    for (o, &v) in dst.iter_mut().zip(row) {
                        *o += v * inv;
                    }
                }
            }
        }
        self.push("masked_mean", Tensor::new([b, d], out)?, Op::MaskedMean { x, mask: mask.to_vec() }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    // ---------------------------------------------------------------------
    // reductions and losses

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean binary cross-entropy between probabilities `p` and 0/1 `targets`
    /// over every element; `p` is clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, p: Var, targets: &[T], eps: f64) -> Result<Var> {
        let pv = self.data(p);
        if pv.len() != targets.len() || pv.is_empty() {
            return Err(LampError::dim("bce", format!("{} probabilities vs {} targets", pv.len(), targets.len())));
        }
        let eps = T::from_f64(eps);
        let hi = T::one() - eps;
        let mut total = T::zero();
        for (&pi, &yi) in pv.iter().zip(targets) {
            let c = pi.max(eps).min(hi);
            total -= yi * c.ln() + (T::one() - yi) * (T::one() - c).ln();
        }
        let value = total / T::from_usize(pv.len());
        self.push("bce", Tensor::scalar(value), Op::Bce { p, targets: targets.to_vec(), eps }, &[p])
    }

    // ---------------------------------------------------------------------
    // reverse sweep

    /// Propagates d`loss`/d(node) back through the tape and accumulates the
    /// result into every gradient-requiring leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(LampError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<(usize, Vec<T>)> = Vec::new();

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let val = |v: Var| nodes[v.0].value.data();
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Add(a, b) => {
                    accumulate(&mut grads, nodes, *a, |ga| add_into(ga, &g));
                    accumulate(&mut grads, nodes, *b, |gb| {
                        if gb.len() == g.len() {
                            add_into(gb, &g)
                        } else {
                            gb[0] += g.iter().copied().sum::<T>()
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let scalar_b = bv.len() == 1 && av.len() != 1;
                    accumulate(&mut grads, nodes, *a, |ga| {
                        for (j, o) in ga.iter_mut().enumerate() {
                            *o += g[j] * if scalar_b { bv[0] } else { bv[j] };
                        }
                    });
                    accumulate(&mut grads, nodes, *b, |gb| {
                        if scalar_b {
                            gb[0] += g.iter().zip(av).map(|(&gi, &ai)| gi * ai).sum::<T>();
                        } else {
                            for (j, o) in gb.iter_mut().enumerate() {
                                *o += g[j] * av[j];
                            }
                        }
                    });
                }
                Op::Scale(a, c) => accumulate(&mut grads, nodes, *a, |ga| {
                    for (o, &gi) in ga.iter_mut().zip(&g) {
                        *o += gi * *c;
                    }
                }),
                Op::Relu(a) => {
                    let av = val(*a);
                    accumulate(&mut grads, nodes, *a, |ga| {
                        for ((o, &gi), &x) in ga.iter_mut().zip(&g).zip(av) {
                            if x > T::zero() {
                                *o += gi;
                            }
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    accumulate(&mut grads, nodes, *a, |ga| {
                        for ((o, &gi), &s) in ga.iter_mut().zip(&g).zip(y) {
                            *o += gi * s * (T::one() - s);
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let sb = nodes[b.0].value.shape();
                    let (k, nn) = (sb[0], sb[1]);
                    let m = g.len() / nn.max(1);
                    let (av, bv) = (val(*a), val(*b));
                    accumulate(&mut grads, nodes, *a, |ga| gemm_nt(&g, bv, ga, m, nn, k));
                    accumulate(&mut grads, nodes, *b, |gb| gemm_tn(av, &g, gb, k, m, nn));
                }
                Op::BatchMatMul { a, b, transpose_b } => {
                    let sa = nodes[a.0].value.shape();
                    let (batch, m, k) = (sa[0], sa[1], sa[2]);
                    let nn = node.value.shape()[2];
                    let (av, bv) = (val(*a), val(*b));
                    let t = *transpose_b;
                    accumulate(&mut grads, nodes, *a, |ga| {
                        for i in 0..batch {
                            let gi = &g[i * m * nn..(i + 1) * m * nn];
                            let bi = &bv[i * k * nn..(i + 1) * k * nn];
                            let dst = &mut ga[i * m * k..(i + 1) * m * k];
                            if t {
                                gemm_nn(gi, bi, dst, m, nn, k);
                            } else {
                                gemm_nt(gi, bi, dst, m, nn, k);
                            }
                        }
                    });
                    accumulate(&mut grads, nodes, *b, |gb| {
                        for i in 0..batch {
                            let gi = &g[i * m * nn..(i + 1) * m * nn];
                            let ai = &av[i * m * k..(i + 1) * m * k];
                            let dst = &mut gb[i * k * nn..(i + 1) * k * nn];
                            if t {
                                gemm_tn(gi, ai, dst, nn, m, k);
                            } else {
                                gemm_tn(ai, gi, dst, k, m, nn);
                            }
                        }
                    });
                }
                Op::AddBias(x, bias) => {
                    accumulate(&mut grads, nodes, *x, |gx| add_into(gx, &g));
                    accumulate(&mut grads, nodes, *bias, |gb| {
                        let n = gb.len();
                        for row in g.chunks(n) {
                            add_into(gb, row);
                        }
                    });
                }
                Op::SplitHeads { x, heads } => {
                    let s = nodes[x.0].value.shape();
                    let (b, r, d) = (s[0], s[1], s[2]);
                    let dk = d / heads;
                    accumulate(&mut grads, nodes, *x, |gx| {
                        for bi in 0..b {
                            for ri in 0..r {
                                for k in 0..*heads {
                                    let from = ((bi * heads + k) * r + ri) * dk;
                                    let to = (bi * r + ri) * d + k * dk;
                                    add_into(&mut gx[to..to + dk], &g[from..from + dk]);
                                }
                            }
                        }
                    });
                }
                Op::MergeHeads { x, heads } => {
                    let s = nodes[x.0].value.shape();
                    let (bk, r, dk) = (s[0], s[1], s[2]);
                    let d = dk * heads;
                    accumulate(&mut grads, nodes, *x, |gx| {
                        for bi in 0..bk / heads {
                            for k in 0..*heads {
                                for ri in 0..r {
                                    let to = ((bi * heads + k) * r + ri) * dk;
                                    let from = (bi * r + ri) * d + k * dk;
                                    add_into(&mut gx[to..to + dk], &g[from..from + dk]);
                                }
                            }
                        }
                    });
                }
                Op::MaskedSoftmax(x) => {
                    let y = node.value.data();
                    let c = node.value.last_dim();
                    accumulate(&mut grads, nodes, *x, |gx| {
                        for ((gxr, yr), gr) in gx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                            let s = dot(gr, yr);
                            for j in 0..c {
                                gxr[j] += yr[j] * (gr[j] - s);
                            }
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let d = node.value.last_dim();
                    let gv = val(*gain);
                    let inv_d = T::one() / T::from_usize(d);
                    accumulate(&mut grads, nodes, *x, |gx| {
                        let mut dxhat = vec![T::zero(); d];
                        for (r, rs) in rstd.iter().enumerate() {
                            let o = r * d;
                            let mut sum = T::zero();
                            let mut sum_x = T::zero();
                            for j in 0..d {
                                dxhat[j] = g[o + j] * gv[j];
                                sum += dxhat[j];
                                sum_x += dxhat[j] * xhat[o + j];
                            }
                            for j in 0..d {
                                gx[o + j] += *rs * (dxhat[j] - inv_d * sum - xhat[o + j] * inv_d * sum_x);
                            }
                        }
                    });
                    accumulate(&mut grads, nodes, *gain, |gg| {
                        for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                gg[j] += gr[j] * hr[j];
                            }
                        }
                    });
                    accumulate(&mut grads, nodes, *bias, |gb| {
                        for gr in g.chunks(d) {
                            add_into(gb, gr);
                        }
                    });
                }
                Op::Dropout { x, keep } => accumulate(&mut grads, nodes, *x, |gx| {
                    for ((o, &gi), &k) in gx.iter_mut().zip(&g).zip(keep) {
                        *o += gi * k;
                    }
                }),
                Op::Gather { table, ids, weights } => {
                    let d = nodes[table.0].value.shape()[1];
                    accumulate(&mut grads, nodes, *table, |gt| {
                        for (r, &id) in ids.iter().enumerate() {
                            let w = weights.as_ref().map_or(T::one(), |w| w[r]);
                            if w == T::zero() {
                                continue;
                            }
                            let dst = &mut gt[id * d..(id + 1) * d];
                            for (o, &gi) in dst.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                                *o += gi * w;
                            }
                        }
                    });
                }
                Op::Tile { x, reps } => accumulate(&mut grads, nodes, *x, |gx| {
                    let n = gx.len();
                    for r in 0..*reps {
                        add_into(gx, &g[r * n..(r + 1) * n]);
                    }
                }),
                Op::RowDot { u, w } => {
                    let su = nodes[u.0].value.shape();
                    let (b, l, d) = (su[0], su[1], su[2]);
                    let (uv, wv) = (val(*u), val(*w));
                    accumulate(&mut grads, nodes, *u, |gu| {
                        for bi in 0..b {
                            for li in 0..l {
                                let gi = g[bi * l + li];
                                let o = (bi * l + li) * d;
                                for j in 0..d {
                                    gu[o + j] += gi * wv[li * d + j];
                                }
                            }
                        }
                    });
                    accumulate(&mut grads, nodes, *w, |gw| {
                        for bi in 0..b {
                            for li in 0..l {
                                let gi = g[bi * l + li];
                                let o = (bi * l + li) * d;
                                for j in 0..d {
                                    gw[li * d + j] += gi * uv[o + j];
                                }
                            }
                        }
                    });
                }
                Op::MaskedMean { x, mask } => {
                    let s = nodes[x.0].value.shape();
                    let (b, n, d) = (s[0], s[1], s[2]);
                    accumulate(&mut grads, nodes, *x, |gx| {
                        for bi in 0..b {
                            let count = mask[bi * n..(bi + 1) * n].iter().filter(|&&m| m).count();
                            let inv = T::one() / T::from_usize(count);
                            for si in 0..n {
                                if mask[bi * n + si] {
                                    let o = (bi * n + si) * d;
                                    for j in 0..d {
                                        gx[o + j] += g[bi * d + j] * inv;
                                    }
                                }
                            }
                        }
                    });
                }
                Op::Reshape(x) => accumulate(&mut grads, nodes, *x, |gx| add_into(gx, &g)),
                Op::Sum(x) => accumulate(&mut grads, nodes, *x, |gx| {
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }),
                Op::Bce { p, targets, eps } => {
                    let pv = val(*p);
                    let inv_n = T::one() / T::from_usize(pv.len());
                    let hi = T::one() - *eps;
                    accumulate(&mut grads, nodes, *p, |gp| {
                        for ((o, &pi), &yi) in gp.iter_mut().zip(pv).zip(targets) {
                            if pi > *eps && pi < hi {
                                *o += g[0] * inv_n * ((T::one() - yi) / (T::one() - pi) - yi / pi);
                            }
                        }
                    });
                }
            }
        }

        for (i, g) in leaf_grads {
            match &mut self.nodes[i].grad {
                Some(existing) => add_into(existing, &g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, f: impl FnOnce(&mut [T])) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let len = node.value.len();
    let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
