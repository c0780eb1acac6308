//! Reverse-mode autodiff over dense 2-D f64 matrices.
//!
//! The whole model zoo here (codec convs via unfold + matmul, transformer
//! blocks, rope, masked softmax) is expressible with the small op set below.
//! A [`Tape`] is built per sample, forward values are computed eagerly, and
//! [`Tape::backward`] walks the node list in reverse. Values are held behind
//! `Arc` so parameter leaves alias the store instead of copying it.
//!
//! Grad correctness for every op is pinned by finite-difference tests at the
//! bottom of this file; the whole-network check lives in the acceptance
//! suite.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use super::ops;
use super::store::ParamStore;

pub type Mat = Array2<f64>;

/// Row index used in unfold tables to mean "zero padding, not a real row".
pub const PAD: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    /// Elementwise a + b (same shape).
    Add,
    /// a (N,D) + b (1,D), broadcast over rows.
    AddRow,
    Sub,
    Mul,
    /// a (N,D) * b (1,D), broadcast over rows.
    MulRow,
    /// a (N,D) * b (N,1), broadcast over columns.
    MulCol,
    Scale(f64),
    AddScalar(f64),
    /// a (M,K) · b (K,N).
    Matmul,
    /// a (M,K) · b (N,K)ᵀ → (M,N).
    MatmulNT,
    Silu,
    Exp,
    /// Row softmax. `allowed` (same numel, row-major) restricts support;
    /// a fully disallowed row yields a zero row (gated, not uniform).
    Softmax { allowed: Option<Arc<Vec<bool>>> },
    /// Per-row normalization to zero mean / unit variance (no affine).
    LayerNorm { inv_std: Vec<f64> },
    /// Pairwise rotation by per-lane angle tables (N, D/2).
    Rope { cos: Arc<Mat>, sin: Arc<Mat> },
    /// Row gather from a table; parent is the table.
    GatherRows { indices: Arc<Vec<usize>> },
    /// Neighborhood gather: output row r is the channel-concatenation of
    /// parent rows `indices[r*group..(r+1)*group]`, PAD entries are zeros.
    Unfold { indices: Arc<Vec<usize>>, group: usize },
    SliceRows { r0: usize },
    SliceCols { c0: usize },
    ConcatRows,
    ConcatCols,
    /// Sum of all elements → (1,1).
    SumAll,
}

struct Node {
    value: Arc<Mat>,
    op: Op,
    parents: Vec<NodeId>,
    needs_grad: bool,
    param: Option<usize>,
}

/// Per-parameter gradients, indexed like the [`ParamStore`].
pub struct Grads {
    pub by_param: Vec<Option<Mat>>,
}

impl Grads {
    pub fn zero(n: usize) -> Self {
        Grads { by_param: (0..n).map(|_| None).collect() }
    }

    /// Accumulate `other` into `self` (fixed order, caller-controlled).
    pub fn add_assign(&mut self, other: &Grads) {
        assert_eq!(self.by_param.len(), other.by_param.len());
        for (dst, src) in self.by_param.iter_mut().zip(other.by_param.iter()) {
            if let Some(s) = src {
                match dst {
                    Some(d) => *d += s,
                    None => *dst = Some(s.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.by_param.iter_mut().flatten() {
            g.mapv_inplace(|v| v * c);
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v[(0, 0)]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, parents: Vec<NodeId>, param: Option<usize>) -> NodeId {
        let needs_grad =
            param.is_some() || parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value: Arc::new(value), op, parents, needs_grad, param });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf: participates in forward math, receives no gradient.
    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf, vec![], None)
    }

    /// Constant leaf sharing an existing buffer.
    pub fn constant_shared(&mut self, value: Arc<Mat>) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, parents: vec![], needs_grad: false, param: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Parameter leaf bound to `store[idx]` (aliases, no copy).
    pub fn param(&mut self, store: &ParamStore, idx: usize) -> NodeId {
        let value = store.shared(idx);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            parents: vec![],
            needs_grad: true,
            param: Some(idx),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "add shape mismatch");
        let v = va + vb;
        self.push(v, Op::Add, vec![a, b], None)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(row));
        assert_eq!(vb.nrows(), 1, "add_row rhs must be (1,D)");
        assert_eq!(va.ncols(), vb.ncols(), "add_row width mismatch");
        let v = va + &vb.row(0);
        self.push(v, Op::AddRow, vec![a, row], None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "sub shape mismatch");
        let v = va - vb;
        self.push(v, Op::Sub, vec![a, b], None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "mul shape mismatch");
        let v = va * vb;
        self.push(v, Op::Mul, vec![a, b], None)
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(row));
        assert_eq!(vb.nrows(), 1, "mul_row rhs must be (1,D)");
        assert_eq!(va.ncols(), vb.ncols(), "mul_row width mismatch");
        let v = va * &vb.row(0);
        self.push(v, Op::MulRow, vec![a, row], None)
    }

    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(col));
        assert_eq!(vb.ncols(), 1, "mul_col rhs must be (N,1)");
        assert_eq!(va.nrows(), vb.nrows(), "mul_col height mismatch");
        let v = va * &vb.column(0).insert_axis(ndarray::Axis(1));
        self.push(v, Op::MulCol, vec![a, col], None)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(c), vec![a], None)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(c), vec![a], None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = ops::matmul(self.value(a).view(), self.value(b).view(), false, false);
        self.push(v, Op::Matmul, vec![a, b], None)
    }

    /// a · bᵀ, for attention logits.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = ops::matmul(self.value(a).view(), self.value(b).view(), false, true);
        self.push(v, Op::MatmulNT, vec![a, b], None)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(ops::silu);
        self.push(v, Op::Silu, vec![a], None)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp, vec![a], None)
    }

    /// Row-wise softmax with optional support mask (`true` = allowed).
    /// Rows with empty support produce zeros.
    pub fn softmax(&mut self, a: NodeId, allowed: Option<Arc<Vec<bool>>>) -> NodeId {
        let va = self.value(a);
        let (n, d) = va.dim();
        if let Some(m) = &allowed {
            assert_eq!(m.len(), n * d, "softmax mask numel mismatch");
        }
        let mut v = Mat::zeros((n, d));
        for i in 0..n {
            let ok = |j: usize| allowed.as_ref().map_or(true, |m| m[i * d + j]);
            let mut mx = f64::NEG_INFINITY;
            for j in 0..d {
                if ok(j) {
                    mx = mx.max(va[(i, j)]);
                }
            }
            if mx == f64::NEG_INFINITY {
                continue; // gated row
            }
            let mut z = 0.0;
            for j in 0..d {
                if ok(j) {
                    let e = (va[(i, j)] - mx).exp();
                    v[(i, j)] = e;
                    z += e;
                }
            }
            for j in 0..d {
                v[(i, j)] /= z;
            }
        }
        self.push(v, Op::Softmax { allowed }, vec![a], None)
    }

    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let va = self.value(a);
        let (n, d) = va.dim();
        assert!(d > 0);
        let mut v = Mat::zeros((n, d));
        let mut inv_std = vec![0.0; n];
        for i in 0..n {
            let row = va.row(i);
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                v[(i, j)] = (va[(i, j)] - mean) * is;
            }
        }
        self.push(v, Op::LayerNorm { inv_std }, vec![a], None)
    }

    /// Rotate adjacent lane pairs (2k, 2k+1) by per-row angles given as
    /// `cos`/`sin` tables of shape (N, D/2). Identity lanes use cos=1, sin=0.
    pub fn rope(&mut self, a: NodeId, cos: Arc<Mat>, sin: Arc<Mat>) -> NodeId {
        let va = self.value(a);
        let (n, d) = va.dim();
        assert_eq!(d % 2, 0, "rope width must be even");
        assert_eq!(cos.dim(), (n, d / 2), "rope cos table shape");
        assert_eq!(sin.dim(), (n, d / 2), "rope sin table shape");
        let mut v = Mat::zeros((n, d));
        for i in 0..n {
            for p in 0..d / 2 {
                let (c, s) = (cos[(i, p)], sin[(i, p)]);
                let (x0, x1) = (va[(i, 2 * p)], va[(i, 2 * p + 1)]);
                v[(i, 2 * p)] = x0 * c - x1 * s;
                v[(i, 2 * p + 1)] = x0 * s + x1 * c;
            }
        }
        self.push(v, Op::Rope { cos, sin }, vec![a], None)
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: Arc<Vec<usize>>) -> NodeId {
        let vt = self.value(table);
        let d = vt.ncols();
        let mut v = Mat::zeros((indices.len(), d));
        for (r, &ix) in indices.iter().enumerate() {
            assert!(ix < vt.nrows(), "gather_rows index {ix} out of range");
            v.row_mut(r).assign(&vt.row(ix));
        }
        self.push(v, Op::GatherRows { indices }, vec![table], None)
    }

    /// Neighborhood gather; see [`Op::Unfold`]. `indices.len()` must be a
    /// multiple of `group`; PAD entries read as zeros.
    pub fn unfold(&mut self, a: NodeId, indices: Arc<Vec<usize>>, group: usize) -> NodeId {
        let va = self.value(a);
        let d = va.ncols();
        assert!(group > 0 && indices.len() % group == 0, "unfold table shape");
        let rows_out = indices.len() / group;
        let mut v = Mat::zeros((rows_out, d * group));
        for r in 0..rows_out {
            for g in 0..group {
                let ix = indices[r * group + g];
                if ix == PAD {
                    continue;
                }
                assert!(ix < va.nrows(), "unfold index {ix} out of range");
                v.row_mut(r)
                    .slice_mut(ndarray::s![g * d..(g + 1) * d])
                    .assign(&va.row(ix));
            }
        }
        self.push(v, Op::Unfold { indices, group }, vec![a], None)
    }

    pub fn slice_rows(&mut self, a: NodeId, r0: usize, r1: usize) -> NodeId {
        let va = self.value(a);
        assert!(r0 <= r1 && r1 <= va.nrows(), "slice_rows range");
        let v = va.slice(ndarray::s![r0..r1, ..]).to_owned();
        self.push(v, Op::SliceRows { r0 }, vec![a], None)
    }

    pub fn slice_cols(&mut self, a: NodeId, c0: usize, c1: usize) -> NodeId {
        let va = self.value(a);
        assert!(c0 <= c1 && c1 <= va.ncols(), "slice_cols range");
        let v = va.slice(ndarray::s![.., c0..c1]).to_owned();
        self.push(v, Op::SliceCols { c0 }, vec![a], None)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let d = self.value(parts[0]).ncols();
        let n: usize = parts.iter().map(|p| self.value(*p).nrows()).sum();
        let mut v = Mat::zeros((n, d));
        let mut r = 0;
        for p in parts {
            let vp = self.value(*p);
            assert_eq!(vp.ncols(), d, "concat_rows width mismatch");
            v.slice_mut(ndarray::s![r..r + vp.nrows(), ..]).assign(vp);
            r += vp.nrows();
        }
        self.push(v, Op::ConcatRows, parts.to_vec(), None)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).nrows();
        let d: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut v = Mat::zeros((n, d));
        let mut c = 0;
        for p in parts {
            let vp = self.value(*p);
            assert_eq!(vp.nrows(), n, "concat_cols height mismatch");
            v.slice_mut(ndarray::s![.., c..c + vp.ncols()]).assign(vp);
            c += vp.ncols();
        }
        self.push(v, Op::ConcatCols, parts.to_vec(), None)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Mat::from_elem((1, 1), s), Op::SumAll, vec![a], None)
    }

    /// Linear layer: x·W + b. `b` may be `None`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    /// Mean of all elements → (1,1).
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a scalar loss node; returns per-parameter grads.
    pub fn backward(&self, loss: NodeId, n_params: usize) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut node_grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        let mut out = Grads::zero(n_params);

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Some(p) = node.param {
                match &mut out.by_param[p] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
            self.propagate(i, &g, &mut node_grads);
        }
        out
    }

    fn accumulate(grads: &mut [Option<Mat>], id: NodeId, delta: Mat) {
        match &mut grads[id.0] {
            Some(acc) => *acc += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let parent_needs =
            |k: usize| -> bool { self.nodes[node.parents[k].0].needs_grad };
        let pval = |k: usize| -> &Mat { &self.nodes[node.parents[k].0].value };

        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                if parent_needs(0) {
                    Self::accumulate(grads, node.parents[0], g.clone());
                }
                if parent_needs(1) {
                    Self::accumulate(grads, node.parents[1], g.clone());
                }
            }
            Op::AddRow => {
                if parent_needs(0) {
                    Self::accumulate(grads, node.parents[0], g.clone());
                }
                if parent_needs(1) {
                    Self::accumulate(grads, node.parents[1], ops::sum_rows(g.view()));
                }
            }
            Op::Sub => {
                if parent_needs(0) {
                    Self::accumulate(grads, node.parents[0], g.clone());
                }
                if parent_needs(1) {
                    Self::accumulate(grads, node.parents[1], -g);
                }
            }
            Op::Mul => {
                if parent_needs(0) {
                    Self::accumulate(grads, node.parents[0], g * pval(1));
                }
                if parent_needs(1) {
                    Self::accumulate(grads, node.parents[1], g * pval(0));
                }
            }
            Op::MulRow => {
                if parent_needs(0) {
                    Self::accumulate(grads, node.parents[0], g * &pval(1).row(0));
                }
                if parent_needs(1) {
                    Self::accumulate(grads, node.parents[1], ops::sum_rows((g * pval(0)).view()));
                }
            }
            Op::MulCol => {
                if parent_needs(0) {
                    let col = pval(1).column(0).insert_axis(ndarray::Axis(1));
                    Self::accumulate(grads, node.parents[0], g * &col);
                }
                if parent_needs(1) {
                    let prod = g * pval(0);
                    let mut d = Mat::zeros((prod.nrows(), 1));
                    for (r, row) in prod.rows().into_iter().enumerate() {
                        d[(r, 0)] = row.sum();
                    }
                    Self::accumulate(grads, node.parents[1], d);
                }
            }
            Op::Scale(c) => {
                if parent_needs(0) {
                    Self::accumulate(grads, node.parents[0], g * *c);
                }
            }
            Op::AddScalar(_) => {
                if parent_needs(0) {
                    Self::accumulate(grads, node.parents[0], g.clone());
                }
            }
            Op::Matmul => {
                if parent_needs(0) {
                    let da = ops::matmul(g.view(), pval(1).view(), false, true);
                    Self::accumulate(grads, node.parents[0], da);
                }
                if parent_needs(1) {
                    let db = ops::matmul(pval(0).view(), g.view(), true, false);
                    Self::accumulate(grads, node.parents[1], db);
                }
            }
            Op::MatmulNT => {
                if parent_needs(0) {
                    let da = ops::matmul(g.view(), pval(1).view(), false, false);
                    Self::accumulate(grads, node.parents[0], da);
                }
                if parent_needs(1) {
                    let db = ops::matmul(g.view(), pval(0).view(), true, false);
                    Self::accumulate(grads, node.parents[1], db);
                }
            }
            Op::Silu => {
                if parent_needs(0) {
                    let x = pval(0);
                    let d = x.mapv(ops::silu_grad) * g;
                    Self::accumulate(grads, node.parents[0], d);
                }
            }
            Op::Exp => {
                if parent_needs(0) {
                    Self::accumulate(grads, node.parents[0], g * &*node.value);
                }
            }
            Op::Softmax { .. } => {
                if parent_needs(0) {
                    // dx = y ∘ (g − Σ_j g_j y_j); gated entries have y = 0.
                    let y = &*node.value;
                    let (n, d) = y.dim();
                    let mut dx = Mat::zeros((n, d));
                    for r in 0..n {
                        let dot: f64 =
                            (0..d).map(|j| g[(r, j)] * y[(r, j)]).sum();
                        for j in 0..d {
                            dx[(r, j)] = y[(r, j)] * (g[(r, j)] - dot);
                        }
                    }
                    Self::accumulate(grads, node.parents[0], dx);
                }
            }
            Op::LayerNorm { inv_std } => {
                if parent_needs(0) {
                    let y = &*node.value;
                    let (n, d) = y.dim();
                    let mut dx = Mat::zeros((n, d));
                    for r in 0..n {
                        let gm: f64 = (0..d).map(|j| g[(r, j)]).sum::<f64>() / d as f64;
                        let gym: f64 =
                            (0..d).map(|j| g[(r, j)] * y[(r, j)]).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[(r, j)] = inv_std[r] * (g[(r, j)] - gm - y[(r, j)] * gym);
                        }
                    }
                    Self::accumulate(grads, node.parents[0], dx);
                }
            }
            Op::Rope { cos, sin } => {
                if parent_needs(0) {
                    // Inverse rotation: transpose of an orthogonal map.
                    let (n, d) = node.value.dim();
                    let mut dx = Mat::zeros((n, d));
                    for r in 0..n {
                        for p in 0..d / 2 {
                            let (c, s) = (cos[(r, p)], sin[(r, p)]);
                            let (g0, g1) = (g[(r, 2 * p)], g[(r, 2 * p + 1)]);
                            dx[(r, 2 * p)] = g0 * c + g1 * s;
                            dx[(r, 2 * p + 1)] = -g0 * s + g1 * c;
                        }
                    }
                    Self::accumulate(grads, node.parents[0], dx);
                }
            }
            Op::GatherRows { indices } => {
                if parent_needs(0) {
                    let table = pval(0);
                    let mut dt = Mat::zeros(table.dim());
                    for (r, &ix) in indices.iter().enumerate() {
                        let mut dst = dt.row_mut(ix);
                        dst += &g.row(r);
                    }
                    Self::accumulate(grads, node.parents[0], dt);
                }
            }
            Op::Unfold { indices, group } => {
                if parent_needs(0) {
                    let src = pval(0);
                    let d = src.ncols();
                    let mut dx = Mat::zeros(src.dim());
                    for r in 0..g.nrows() {
                        for k in 0..*group {
                            let ix = indices[r * group + k];
                            if ix == PAD {
                                continue;
                            }
                            let gslice = g.slice(ndarray::s![r, k * d..(k + 1) * d]);
                            let mut dst = dx.row_mut(ix);
                            dst += &gslice;
                        }
                    }
                    Self::accumulate(grads, node.parents[0], dx);
                }
            }
            Op::SliceRows { r0 } => {
                if parent_needs(0) {
                    let src = pval(0);
                    let mut dx = Mat::zeros(src.dim());
                    dx.slice_mut(ndarray::s![*r0..*r0 + g.nrows(), ..]).assign(g);
                    Self::accumulate(grads, node.parents[0], dx);
                }
            }
            Op::SliceCols { c0 } => {
                if parent_needs(0) {
                    let src = pval(0);
                    let mut dx = Mat::zeros(src.dim());
                    dx.slice_mut(ndarray::s![.., *c0..*c0 + g.ncols()]).assign(g);
                    Self::accumulate(grads, node.parents[0], dx);
                }
            }
            Op::ConcatRows => {
                let mut r = 0;
                for k in 0..node.parents.len() {
                    let rows = pval(k).nrows();
                    if parent_needs(k) {
                        let part = g.slice(ndarray::s![r..r + rows, ..]).to_owned();
                        Self::accumulate(grads, node.parents[k], part);
                    }
                    r += rows;
                }
            }
            Op::ConcatCols => {
                let mut c = 0;
                for k in 0..node.parents.len() {
                    let cols = pval(k).ncols();
                    if parent_needs(k) {
                        let part = g.slice(ndarray::s![.., c..c + cols]).to_owned();
                        Self::accumulate(grads, node.parents[k], part);
                    }
                    c += cols;
                }
            }
            Op::SumAll => {
                if parent_needs(0) {
                    let gp = Mat::from_elem(pval(0).dim(), g[(0, 0)]);
                    Self::accumulate(grads, node.parents[0], gp);
                }
            }
        }
    }
}

/// Convenience: weighted masked squared error against a constant target.
/// `loss = Σ_r w_r · ‖pred_r − target_r‖² / Σ_r mask_r`, where `w` already
/// folds the mask (w_r = 0 where masked out).
pub fn masked_sse(
    tape: &mut Tape,
    pred: NodeId,
    target: &Mat,
    row_weights: &[f64],
    active_rows: usize,
) -> NodeId {
    assert!(active_rows > 0, "masked_sse needs at least one active row");
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t);
    let sq = tape.mul(diff, diff);
    let w = tape.constant(Mat::from_shape_vec((row_weights.len(), 1), row_weights.to_vec()).unwrap());
    let weighted = tape.mul_col(sq, w);
    let s = tape.sum_all(weighted);
    tape.scale(s, 1.0 / active_rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::store::ParamStore;
    use ndarray::Array2;
    use rand::Rng;

    /// Finite-difference oracle: builds `f` twice per perturbed entry.
    /// `f` maps (store, tape) -> scalar loss node.
    fn fd_check<F: Fn(&ParamStore, &mut Tape) -> NodeId>(store: &mut ParamStore, f: F, tol: f64) {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape);
        let grads = tape.backward(loss, store.len());

        let eps = 1e-6;
        for p in 0..store.len() {
            let base = store.values(p).clone();
            let ga = grads.by_param[p].clone();
            for idx in 0..base.len() {
                let (r, c) = (idx / base.ncols(), idx % base.ncols());
                let mut plus = base.clone();
                plus[(r, c)] += eps;
                store.set_values(p, plus);
                let mut t1 = Tape::new();
                let l1 = f(store, &mut t1);
                let f1 = t1.scalar(l1);

                let mut minus = base.clone();
                minus[(r, c)] -= eps;
                store.set_values(p, minus);
                let mut t2 = Tape::new();
                let l2 = f(store, &mut t2);
                let f2 = t2.scalar(l2);

                store.set_values(p, base.clone());
                let fd = (f1 - f2) / (2.0 * eps);
                let an = ga.as_ref().map_or(0.0, |g| g[(r, c)]);
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    ((fd - an) / denom).abs() < tol,
                    "param {p} [{r},{c}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn grads_linear_chain() {
        let mut rng = crate::rng::stream_rng(1, crate::rng::Stream::ParamInit, 0);
        let mut store = ParamStore::new();
        store.register("w", rand_mat(&mut rng, 4, 3));
        store.register("b", rand_mat(&mut rng, 1, 3));
        let x = rand_mat(&mut rng, 5, 4);
        let tgt = rand_mat(&mut rng, 5, 3);
        fd_check(
            &mut store,
            |s, t| {
                let w = t.param(s, 0);
                let b = t.param(s, 1);
                let xn = t.constant(x.clone());
                let y = t.linear(xn, w, Some(b));
                let act = t.silu(y);
                let tn = t.constant(tgt.clone());
                let d = t.sub(act, tn);
                let sq = t.mul(d, d);
                t.mean_all(sq)
            },
            1e-5,
        );
    }

    #[test]
    fn grads_softmax_attention_with_mask() {
        let mut rng = crate::rng::stream_rng(2, crate::rng::Stream::ParamInit, 0);
        let mut store = ParamStore::new();
        store.register("q", rand_mat(&mut rng, 4, 6));
        store.register("k", rand_mat(&mut rng, 5, 6));
        store.register("v", rand_mat(&mut rng, 5, 6));
        // Row 3 fully gated; others keep 3 of 5 keys.
        let mut allowed = vec![true; 4 * 5];
        for j in 0..5 {
            allowed[3 * 5 + j] = false;
        }
        allowed[1] = false;
        allowed[7] = false;
        let allowed = Arc::new(allowed);
        fd_check(
            &mut store,
            |s, t| {
                let q = t.param(s, 0);
                let k = t.param(s, 1);
                let v = t.param(s, 2);
                let logits = t.matmul_nt(q, k);
                let scaled = t.scale(logits, 1.0 / (6.0f64).sqrt());
                let attn = t.softmax(scaled, Some(allowed.clone()));
                let out = t.matmul(attn, v);
                let sq = t.mul(out, out);
                t.mean_all(sq)
            },
            1e-5,
        );
    }

    #[test]
    fn grads_layernorm_rope_unfold() {
        let mut rng = crate::rng::stream_rng(3, crate::rng::Stream::ParamInit, 0);
        let mut store = ParamStore::new();
        store.register("x", rand_mat(&mut rng, 6, 8));
        // Rope tables: rotate first two pairs, identity on the rest.
        let mut cos = Mat::from_elem((3, 4), 1.0);
        let mut sin = Mat::zeros((3, 4));
        for r in 0..3 {
            for p in 0..2 {
                let ang = 0.3 * (r as f64 + 1.0) * (p as f64 + 1.0);
                cos[(r, p)] = ang.cos();
                sin[(r, p)] = ang.sin();
            }
        }
        let (cos, sin) = (Arc::new(cos), Arc::new(sin));
        // Unfold: 3 output rows, each gathering 2 input rows (one PAD).
        let indices = Arc::new(vec![0, 1, 2, 3, 4, PAD]);
        fd_check(
            &mut store,
            |s, t| {
                let x = t.param(s, 0);
                let ln = t.layer_norm(x, 1e-6);
                let uf = t.unfold(ln, indices.clone(), 2);
                let sl = t.slice_cols(uf, 0, 8);
                let ro = t.rope(sl, cos.clone(), sin.clone());
                let e = t.exp(ro);
                let sc = t.scale(e, 0.25);
                t.mean_all(sc)
            },
            1e-4,
        );
    }

    #[test]
    fn grads_gather_concat_paths() {
        let mut rng = crate::rng::stream_rng(4, crate::rng::Stream::ParamInit, 0);
        let mut store = ParamStore::new();
        store.register("table", rand_mat(&mut rng, 7, 4));
        store.register("w", rand_mat(&mut rng, 8, 2));
        let idx = Arc::new(vec![2usize, 2, 5, 0]);
        fd_check(
            &mut store,
            |s, t| {
                let table = t.param(s, 0);
                let w = t.param(s, 1);
                let g1 = t.gather_rows(table, idx.clone());
                let g2 = t.slice_rows(table, 1, 5);
                let cat = t.concat_cols(&[g1, g2]);
                let rows = t.concat_rows(&[cat, cat]);
                let y = t.matmul(rows, w);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            },
            1e-5,
        );
    }

    #[test]
    fn rope_preserves_norm_and_zero_angle_is_identity() {
        let mut rng = crate::rng::stream_rng(5, crate::rng::Stream::ParamInit, 0);
        let x = rand_mat(&mut rng, 4, 8);
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let cos = Arc::new(Mat::from_elem((4, 4), 1.0));
        let sin = Arc::new(Mat::zeros((4, 4)));
        let y = tape.rope(xn, cos, sin);
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn gated_softmax_rows_are_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Mat::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let allowed = Arc::new(vec![true, true, false, false, false, false]);
        let y = tape.softmax(x, Some(allowed));
        let v = tape.value(y);
        assert!(v.row(1).iter().all(|&x| x == 0.0));
        assert!((v.row(0).sum() - 1.0).abs() < 1e-12);
        assert_eq!(v[(0, 2)], 0.0);
    }
}
