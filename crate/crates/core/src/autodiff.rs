//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation eagerly (values are computed on
//! construction) and [`Graph::backward`] replays the tape in reverse. Only the
//! handful of operations the encoder and transformer need are provided; each
//! one carries a hand-derived vector-Jacobian product.

use std::collections::HashMap;
use std::sync::Arc;

use crate::params::{ParamId, ParamStore};
use crate::scalar::{count, lit, Scalar};
use crate::tensor::{gemm, Tensor, View, ViewMut};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Boolean attention visibility grid; `allow(q, k)` means query row `q` may
/// read key row `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl AttnMask {
    pub fn new(rows: usize, cols: usize, allow: Vec<bool>) -> Self {
        assert_eq!(allow.len(), rows * cols, "mask size mismatch");
        Self { rows, cols, allow }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(rows * cols);
        for q in 0..rows {
            for k in 0..cols {
                allow.push(f(q, k));
            }
        }
        Self { rows, cols, allow }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.cols + k]
    }

    #[inline]
    pub fn row(&self, q: usize) -> &[bool] {
        &self.allow[q * self.cols..(q + 1) * self.cols]
    }
}

const LN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectRows {
        x: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        /// Per-row (mean, 1/std).
        stats: Vec<(T, T)>,
    },
    Gelu(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        /// heads x rows x cols softmax weights.
        probs: Vec<T>,
    },
    SegmentMax {
        x: Var,
        /// Source row for every output element.
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        weights: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Eager computation tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable leaf bound to a stored parameter; repeated requests share a node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        assert_eq!(r.cols(), self.value(a).cols(), "add_row width");
        let r = r.row(0).to_vec();
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// `x * w + b` with `b` a single row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            assert!(i < t.rows(), "gather index {i} out of range");
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(ids.len(), cols, data);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Same as [`Graph::gather`] but for intermediate values.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let t = self.value(x);
        let cols = t.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(idx.len(), cols, data);
        self.push(
            out,
            Op::SelectRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat width");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    /// Row-wise layer normalization with affine `gain`/`bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xt = self.value(x);
        let (rows, cols) = xt.shape();
        let g = self.value(gain).row(0).to_vec();
        let b = self.value(bias).row(0).to_vec();
        let n = count::<T>(cols);
        let eps = lit::<T>(LN_EPS);
        let mut out = Tensor::zeros(rows, cols);
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xt.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + eps).sqrt();
            stats.push((mean, rstd));
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (row[c] - mean) * rstd * g[c] + b[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_fwd);
        self.push(out, Op::Gelu(x))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `S x D`, `k` and `v` are `M x D`; `mask` is `S x M`. Disallowed
    /// keys receive exactly zero weight. Every row must allow at least one key.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Arc<AttnMask>) -> Var {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (s, d) = qt.shape();
        let m = kt.rows();
        assert_eq!(kt.cols(), d, "key width");
        assert_eq!(vt.shape(), (m, d), "value shape");
        assert_eq!((mask.rows(), mask.cols()), (s, m), "mask shape");
        assert!(heads > 0 && d % heads == 0, "heads must divide width");
        let dh = d / heads;
        let scale = T::one() / count::<T>(dh).sqrt();
        let mut probs = vec![T::zero(); heads * s * m];
        let mut out = Tensor::zeros(s, d);
        let mut scores = Tensor::zeros(s, m);
        for h in 0..heads {
            let qh = View::cols_of(qt, h * dh, dh);
            let kh = View::cols_of(kt, h * dh, dh);
            gemm(scale, qh, kh.t(), T::zero(), ViewMut::full(&mut scores));
            let p = &mut probs[h * s * m..(h + 1) * s * m];
            for r in 0..s {
                masked_softmax(scores.row(r), mask.row(r), &mut p[r * m..(r + 1) * m]);
            }
            let p_view = View {
                data: &*p,
                off: 0,
                rows: s,
                cols: m,
                rs: m,
                cs: 1,
            };
            let vh = View::cols_of(vt, h * dh, dh);
            gemm(
                T::one(),
                p_view,
                vh,
                T::zero(),
                ViewMut::cols_of(&mut out, h * dh, dh),
            );
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Column-wise max over each row segment; output row `i` pools `segments[i]`.
    pub fn segment_max(&mut self, x: Var, segments: &[Vec<usize>]) -> Var {
        let xt = self.value(x);
        let cols = xt.cols();
        let mut out = Tensor::zeros(segments.len(), cols);
        let mut argmax = vec![0usize; segments.len() * cols];
        for (i, seg) in segments.iter().enumerate() {
            assert!(!seg.is_empty(), "segment_max over empty segment");
            for c in 0..cols {
                let mut best = seg[0];
                let mut best_v = xt.get(best, c);
                for &r in &seg[1..] {
                    let v = xt.get(r, c);
                    if v > best_v {
                        best = r;
                        best_v = v;
                    }
                }
                out.set(i, c, best_v);
                argmax[i * cols + c] = best;
            }
        }
        self.push(out, Op::SegmentMax { x, argmax })
    }

    /// `sum_r weights[r] * (-log softmax(logits[r])[targets[r]])` as a `1 x 1` value.
    /// Rows with zero weight are skipped entirely.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], weights: &[T]) -> Var {
        let lt = self.value(logits);
        assert_eq!(lt.rows(), targets.len(), "one target per row");
        assert_eq!(lt.rows(), weights.len(), "one weight per row");
        let mut total = T::zero();
        for r in 0..lt.rows() {
            if weights[r] == T::zero() {
                continue;
            }
            let row = lt.row(r);
            let tgt = targets[r] as usize;
            assert!(tgt < row.len(), "target out of vocabulary");
            total += weights[r] * (log_sum_exp(row) - row[tgt]);
        }
        self.push(
            Tensor::from_vec(1, 1, vec![total]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    /// Back-propagates from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(1, 1, T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params = HashMap::new();
        for (&pid, &var) in &self.params {
            if var.0 <= output.0 {
                if let Some(g) = grads[var.0].take() {
                    params.insert(pid, g);
                }
            }
        }
        Gradients { params }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                gemm(
                    T::one(),
                    View::full(g),
                    View::full(bv).t(),
                    T::zero(),
                    ViewMut::full(&mut ga),
                );
                let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                gemm(
                    T::one(),
                    View::full(av).t(),
                    View::full(g),
                    T::zero(),
                    ViewMut::full(&mut gb),
                );
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in gr.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, gr);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let mut gt = Tensor::zeros(tv.rows(), tv.cols());
                for (r, &i) in ids.iter().enumerate() {
                    for (o, &v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *table, gt);
            }
            Op::SelectRows { x, idx } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    let slice = g.data()[r0 * cols..(r0 + rows) * cols].to_vec();
                    accumulate(grads, p, Tensor::from_vec(rows, cols, slice));
                    r0 += rows;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => {
                let xv = self.value(*x);
                let gain_v = self.value(*gain).row(0);
                let (rows, cols) = xv.shape();
                let n = count::<T>(cols);
                let mut gx = Tensor::zeros(rows, cols);
                let mut gg = Tensor::zeros(1, cols);
                let mut gb = Tensor::zeros(1, cols);
                let mut xhat = vec![T::zero(); cols];
                let mut dxhat = vec![T::zero(); cols];
                for r in 0..rows {
                    let (mean, rstd) = stats[r];
                    let gr = g.row(r);
                    for c in 0..cols {
                        xhat[c] = (xv.get(r, c) - mean) * rstd;
                        dxhat[c] = gr[c] * gain_v[c];
                    }
                    {
                        let ggr = gg.row_mut(0);
                        for c in 0..cols {
                            ggr[c] += gr[c] * xhat[c];
                        }
                    }
                    {
                        let gbr = gb.row_mut(0);
                        for c in 0..cols {
                            gbr[c] += gr[c];
                        }
                    }
                    let mean_d = dxhat.iter().copied().sum::<T>() / n;
                    let mean_dx = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(&a, &b)| a * b)
                        .sum::<T>()
                        / n;
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = rstd * (dxhat[c] - mean_d - xhat[c] * mean_dx);
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gain, gg);
                accumulate(grads, *bias, gb);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let mut gx = g.clone();
                for (o, &xi) in gx.data_mut().iter_mut().zip(xv.data()) {
                    *o *= gelu_grad(xi);
                }
                accumulate(grads, *x, gx);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (s, d) = qv.shape();
                let m = kv.rows();
                let dh = d / heads;
                let scale = T::one() / count::<T>(dh).sqrt();
                let mut gq = Tensor::zeros(s, d);
                let mut gk = Tensor::zeros(m, d);
                let mut gv = Tensor::zeros(m, d);
                let mut dp = Tensor::zeros(s, m);
                for h in 0..*heads {
                    let p = &probs[h * s * m..(h + 1) * s * m];
                    let p_view = View {
                        data: p,
                        off: 0,
                        rows: s,
                        cols: m,
                        rs: m,
                        cs: 1,
                    };
                    let go_h = View::cols_of(g, h * dh, dh);
                    // dV_h = P^T dO_h
                    gemm(
                        T::one(),
                        p_view.t(),
                        go_h,
                        T::zero(),
                        ViewMut::cols_of(&mut gv, h * dh, dh),
                    );
                    // dP = dO_h V_h^T
                    gemm(
                        T::one(),
                        go_h,
                        View::cols_of(vv, h * dh, dh).t(),
                        T::zero(),
                        ViewMut::full(&mut dp),
                    );
                    // dS = P * (dP - <dP, P>_row)
                    for r in 0..s {
                        let pr = &p[r * m..(r + 1) * m];
                        let dpr = dp.row_mut(r);
                        let dot = pr
                            .iter()
                            .zip(dpr.iter())
                            .map(|(&a, &b)| a * b)
                            .sum::<T>();
                        for (o, &pv) in dpr.iter_mut().zip(pr) {
                            *o = pv * (*o - dot);
                        }
                    }
                    gemm(
                        scale,
                        View::full(&dp),
                        View::cols_of(kv, h * dh, dh),
                        T::zero(),
                        ViewMut::cols_of(&mut gq, h * dh, dh),
                    );
                    gemm(
                        scale,
                        View::full(&dp).t(),
                        View::cols_of(qv, h * dh, dh),
                        T::zero(),
                        ViewMut::cols_of(&mut gk, h * dh, dh),
                    );
                }
                accumulate(grads, *q, gq);
                accumulate(grads, *k, gk);
                accumulate(grads, *v, gv);
            }
            Op::SegmentMax { x, argmax } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut gx = Tensor::zeros(xv.rows(), cols);
                for (i, &src) in argmax.iter().enumerate() {
                    let (r, c) = (i / cols, i % cols);
                    let cur = gx.get(src, c);
                    gx.set(src, c, cur + g.get(r, c));
                }
                accumulate(grads, *x, gx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
            } => {
                let lv = self.value(*logits);
                let upstream = g.get(0, 0);
                let mut gl = Tensor::zeros(lv.rows(), lv.cols());
                for r in 0..lv.rows() {
                    if weights[r] == T::zero() {
                        continue;
                    }
                    let row = lv.row(r);
                    let lse = log_sum_exp(row);
                    let w = weights[r] * upstream;
                    for (c, o) in gl.row_mut(r).iter_mut().enumerate() {
                        *o = w * (row[c] - lse).exp();
                    }
                    let t = targets[r] as usize;
                    let cur = gl.get(r, t);
                    gl.set(r, t, cur - w);
                }
                accumulate(grads, *logits, gl);
            }
        }
    }
}

/// Gradients of the trainable leaves reached by a backward pass.
pub struct Gradients<T> {
    params: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Adds `scale * grad` into `acc` for every parameter touched.
    pub fn accumulate_into(&self, acc: &mut ParamStore<T>, scale: T) {
        for (&id, g) in &self.params {
            let dst = acc.get_mut(id);
            for (o, &v) in dst.data_mut().iter_mut().zip(g.data()) {
                *o += scale * v;
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn masked_softmax<T: Scalar>(scores: &[T], allow: &[bool], out: &mut [T]) {
    let mut max = T::neg_infinity();
    for (&s, &a) in scores.iter().zip(allow) {
        if a && s > max {
            max = s;
        }
    }
    assert!(max > T::neg_infinity(), "attention row with no visible keys");
    let mut sum = T::zero();
    for ((o, &s), &a) in out.iter_mut().zip(scores).zip(allow) {
        if a {
            let e = (s - max).exp();
            *o = e;
            sum += e;
        } else {
            *o = T::zero();
        }
    }
    let inv = T::one() / sum;
    for (o, &a) in out.iter_mut().zip(allow) {
        if a {
            *o *= inv;
        }
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = row.iter().map(|&v| (v - max).exp()).sum::<T>();
    max + sum.ln()
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (lit((2.0 / std::f64::consts::PI).sqrt()), lit(0.044715))
}

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = lit::<T>(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = lit::<T>(0.5);
    let three = lit::<T>(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + three * a * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}
