//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Every model in this crate builds its forward pass on a [`Graph`] and gets
//! exact gradients from [`Graph::backward`]. Values are always rank-2; a
//! vector is a `1 × n` row and a scalar is `1 × 1`.
//!
//! Sequences of different lengths are packed row-wise and described by
//! [`Segment`]s, so attention and pooling never see padding.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A contiguous run of packed rows `[start, start + len)` forming one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Builds segments for consecutive sequences of the given lengths.
pub fn pack_segments(lengths: impl IntoIterator<Item = usize>) -> Vec<Segment> {
    let mut start = 0;
    lengths
        .into_iter()
        .map(|len| {
            let seg = Segment::new(start, len);
            start += len;
            seg
        })
        .collect()
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ScalarMul(Var, Var),
    ScalarDiv(Var, Var),
    Gather(Var, Rc<[usize]>),
    ConcatRows(Vec<Var>),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    ClampedExp { x: Var, lo: f64, hi: f64 },
    Dropout(Var, Mat),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    NormalizeRows { x: Var, norms: Vec<f64> },
    Attention(Box<AttentionCache>),
    SegmentMean(Var, Rc<[Segment]>),
    RowDot(Var, Var),
    Sum(Var),
    Mean(Var),
    Contrastive { logits: Var, probs: Mat },
}

struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    segments: Rc<[Segment]>,
    heads: usize,
    scale: f64,
    /// Softmax probabilities per (segment, head), segment-major.
    probs: Vec<Mat>,
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// The tape. Nodes are appended in topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Row-wise softmax in place; entries equal to `-inf` get probability 0.
/// Row softmax in place; returns each row's log-sum-exp.
fn softmax_rows(m: &mut Mat) -> Vec<f64> {
    let mut lse = Vec::with_capacity(m.nrows());
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = if *v == f64::NEG_INFINITY { 0.0 } else { (*v - max).exp() };
            sum += *v;
        }
        let inv = 1.0 / sum;
        row.mapv_inplace(|v| v * inv);
        lse.push(max + sum.ln());
    }
    lse
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Mat) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Mat) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.input(Mat::from_elem((1, 1), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        debug_assert_eq!(self.shape(bias).0, 1);
        let value = self.value(a) + self.value(bias);
        self.push(value, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::AddConst(a), &[a])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, 1.0)
    }

    /// Multiplies every entry of `a` by the `1 × 1` value `s`.
    pub fn scalar_mul(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        let value = self.value(a) * c;
        self.push(value, Op::ScalarMul(a, s), &[a, s])
    }

    /// Divides every entry of `a` by the `1 × 1` value `s`.
    pub fn scalar_div(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        let value = self.value(a) / c;
        self.push(value, Op::ScalarDiv(a, s), &[a, s])
    }

    /// Selects rows of `a` by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, indices: impl Into<Rc<[usize]>>) -> Var {
        let indices: Rc<[usize]> = indices.into();
        let value = self.value(a).select(Axis(0), &indices);
        self.push(value, Op::Gather(a, indices), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus);
        self.push(value, Op::Softplus(a), &[a])
    }

    /// `clamp(exp(x), lo, hi)`; the gradient is zero where the clamp is active.
    pub fn clamped_exp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).mapv(|v| v.exp().clamp(lo, hi));
        self.push(value, Op::ClampedExp { x, lo, hi }, &[x])
    }

    /// Inverted dropout with a caller-supplied keep mask (entries 0 or 1/(1-p)).
    pub fn dropout_with_mask(&mut self, a: Var, mask: Mat) -> Var {
        debug_assert_eq!(self.shape(a), mask.dim());
        let value = self.value(a) * &mask;
        self.push(value, Op::Dropout(a, mask), &[a])
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mut xhat = Mat::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            Zip::from(xhat.row_mut(r)).and(row).for_each(|o, &v| *o = (v - mean) * is);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta])
    }

    /// Scales each row to unit Euclidean length.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let norms: Vec<f64> = xv.rows().into_iter().map(|r| r.dot(&r).sqrt().max(1e-12)).collect();
        let mut value = xv.clone();
        for (mut row, n) in value.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|v| v / n);
        }
        self.push(value, Op::NormalizeRows { x, norms }, &[x])
    }

    /// Scaled dot-product attention applied independently inside each segment.
    ///
    /// `q`, `k`, `v` are packed `T × d` matrices; `d` is split evenly into
    /// `heads` column blocks. With `causal`, position `i` of a segment only
    /// attends to positions `<= i` of the same segment.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: Rc<[Segment]>, heads: usize, causal: bool) -> Var {
        let (rows, d) = self.shape(q);
        assert!(heads > 0 && d % heads == 0, "attention: width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = Mat::zeros((rows, d));
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for seg in segments.iter() {
            let (a, b) = (seg.start, seg.end());
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![a..b, cols.clone()]);
                let ks = kv.slice(s![a..b, cols.clone()]);
                let vs = vv.slice(s![a..b, cols.clone()]);
                let mut scores = qs.dot(&ks.t()) * scale;
                if causal {
                    for i in 0..seg.len {
                        for j in i + 1..seg.len {
                            scores[[i, j]] = f64::NEG_INFINITY;
                        }
                    }
                }
                softmax_rows(&mut scores);
                out.slice_mut(s![a..b, cols]).assign(&scores.dot(&vs));
                probs.push(scores);
            }
        }
        let cache = AttentionCache { q, k, v, segments, heads, scale, probs };
        self.push(out, Op::Attention(Box::new(cache)), &[q, k, v])
    }

    /// Mean over the rows of each segment; one output row per segment.
    pub fn segment_mean(&mut self, x: Var, segments: Rc<[Segment]>) -> Var {
        let xv = self.value(x);
        let mut value = Mat::zeros((segments.len(), xv.ncols()));
        for (i, seg) in segments.iter().enumerate() {
            let block = xv.slice(s![seg.start..seg.end(), ..]);
            value.row_mut(i).assign(&block.mean_axis(Axis(0)).expect("empty segment"));
        }
        self.push(value, Op::SegmentMean(x, segments), &[x])
    }

    /// Per-row inner product, `n × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        debug_assert_eq!(av.dim(), bv.dim());
        let value = (av * bv).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowDot(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Mat::from_elem((1, 1), av.sum() / av.len() as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    /// In-batch contrastive objective over a square logit matrix.
    ///
    /// Returns `-(1/B) Σ_i [L_ii - log Σ_{k ∈ D_i} exp(L_ik)]` where the
    /// denominator set `D_i` is every `k ≠ i`, or every `k` when
    /// `include_positive` is set.
    pub fn contrastive(&mut self, logits: Var, include_positive: bool) -> Var {
        let lv = self.value(logits);
        let (b, b2) = lv.dim();
        assert_eq!(b, b2, "contrastive: logits must be square");
        let mut probs = lv.clone();
        if !include_positive {
            for i in 0..b {
                probs[[i, i]] = f64::NEG_INFINITY;
            }
        }
        let lse = softmax_rows(&mut probs);
        let total: f64 = (0..b).map(|i| lse[i] - lv[[i, i]]).sum();
        let value = Mat::from_elem((1, 1), total / b as f64);
        self.push(value, Op::Contrastive { logits, probs }, &[logits])
    }

    /// Reverse sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward: output must be a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |v: Var, delta: Mat| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.dot(self.value(*b)));
                }
                if self.wants(*b) {
                    acc(*b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.wants(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                if self.wants(*bias) {
                    acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::ScalarMul(a, s) => {
                let c = self.scalar(*s);
                if self.wants(*a) {
                    acc(*a, g * c);
                }
                if self.wants(*s) {
                    let d = (g * self.value(*a)).sum();
                    acc(*s, Mat::from_elem((1, 1), d));
                }
            }
            Op::ScalarDiv(a, s) => {
                let c = self.scalar(*s);
                if self.wants(*a) {
                    acc(*a, g / c);
                }
                if self.wants(*s) {
                    let d = -(g * self.value(*a)).sum() / (c * c);
                    acc(*s, Mat::from_elem((1, 1), d));
                }
            }
            Op::Gather(a, indices) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (r, &i) in indices.iter().enumerate() {
                    let mut dst = d.row_mut(i);
                    dst += &g.row(r);
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).nrows();
                    acc(*p, g.slice(s![start..start + n, ..]).to_owned());
                    start += n;
                }
            }
            Op::Gelu(a) => {
                let mut d = self.value(*a).mapv(gelu_grad);
                d *= g;
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = node.value.mapv(|y| y * (1.0 - y));
                d *= g;
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = node.value.mapv(|y| 1.0 - y * y);
                d *= g;
                acc(*a, d);
            }
            Op::Softplus(a) => {
                let mut d = self.value(*a).mapv(sigmoid);
                d *= g;
                acc(*a, d);
            }
            Op::ClampedExp { x, lo, hi } => {
                let mut d = self.value(*x).mapv(|v| {
                    let e = v.exp();
                    if e < *lo || e > *hi {
                        0.0
                    } else {
                        e
                    }
                });
                d *= g;
                acc(*x, d);
            }
            Op::Dropout(a, mask) => acc(*a, g * mask),
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                if self.wants(*gamma) {
                    acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*beta) {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*x) {
                    let dxhat = g * self.value(*gamma);
                    let n = xhat.ncols() as f64;
                    let mut dx = Mat::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_d = dh.sum();
                        let sum_dx = dh.dot(&xh);
                        let is = inv_std[r];
                        Zip::from(dx.row_mut(r)).and(dh).and(xh).for_each(|o, &d, &h| {
                            *o = is / n * (n * d - sum_d - h * sum_dx);
                        });
                    }
                    acc(*x, dx);
                }
            }
            Op::NormalizeRows { x, norms } => {
                let y = &node.value;
                let mut dx = Mat::zeros(y.dim());
                for r in 0..y.nrows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj = gr.dot(&yr);
                    Zip::from(dx.row_mut(r)).and(gr).and(yr).for_each(|o, &gv, &yv| {
                        *o = (gv - proj * yv) / norms[r];
                    });
                }
                acc(*x, dx);
            }
            Op::Attention(cache) => self.attention_backward(cache, g, &mut acc),
            Op::SegmentMean(x, segments) => {
                let mut d = Mat::zeros(self.value(*x).dim());
                for (i, seg) in segments.iter().enumerate() {
                    let row = g.row(i).mapv(|v| v / seg.len as f64);
                    for r in seg.start..seg.end() {
                        d.row_mut(r).assign(&row);
                    }
                }
                acc(*x, d);
            }
            Op::RowDot(a, b) => {
                let gcol = g.column(0).insert_axis(Axis(1));
                if self.wants(*a) {
                    acc(*a, self.value(*b) * &gcol);
                }
                if self.wants(*b) {
                    acc(*b, self.value(*a) * &gcol);
                }
            }
            Op::Sum(a) => acc(*a, Mat::from_elem(self.value(*a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, Mat::from_elem(self.value(*a).dim(), g[[0, 0]] / n));
            }
            Op::Contrastive { logits, probs } => {
                let b = probs.nrows();
                let mut d = probs.clone();
                for i in 0..b {
                    d[[i, i]] -= 1.0;
                }
                d *= g[[0, 0]] / b as f64;
                acc(*logits, d);
            }
        }
    }

    fn attention_backward(&self, c: &AttentionCache, g: &Mat, acc: &mut impl FnMut(Var, Mat)) {
        let (qv, kv, vv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let d = qv.ncols();
        let dh = d / c.heads;
        let mut dq = Mat::zeros(qv.dim());
        let mut dk = Mat::zeros(kv.dim());
        let mut dv = Mat::zeros(vv.dim());
        let mut p_iter = c.probs.iter();
        for seg in c.segments.iter() {
            let (a, b) = (seg.start, seg.end());
            for h in 0..c.heads {
                let p = p_iter.next().expect("attention cache out of sync");
                let cols = h * dh..(h + 1) * dh;
                let go = g.slice(s![a..b, cols.clone()]);
                let qs = qv.slice(s![a..b, cols.clone()]);
                let ks = kv.slice(s![a..b, cols.clone()]);
                let vs = vv.slice(s![a..b, cols.clone()]);
                dv.slice_mut(s![a..b, cols.clone()]).assign(&p.t().dot(&go));
                let dp = go.dot(&vs.t());
                let mut ds = p * &dp;
                let row_sums = ds.sum_axis(Axis(1));
                for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
                    Zip::from(&mut row).and(p.row(i)).for_each(|o, &pv| *o -= pv * row_sums[i]);
                }
                ds *= c.scale;
                dq.slice_mut(s![a..b, cols.clone()]).assign(&ds.dot(&ks));
                dk.slice_mut(s![a..b, cols]).assign(&ds.t().dot(&qs));
            }
        }
        acc(c.q, dq);
        acc(c.k, dk);
        acc(c.v, dv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Checks every leaf created by `build` against central differences.
    fn check(leaves: Vec<Mat>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let eval = |vals: &[Mat]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|m| g.param(m.clone())).collect();
            let out = build(&mut g, &vars);
            (g, vars, out)
        };
        let (g, vars, out) = eval(&leaves);
        let grads = g.backward(out);
        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(vars[li]).cloned().unwrap_or_else(|| Mat::zeros(leaf.dim()));
            for idx in 0..leaf.len() {
                let (r, c) = (idx / leaf.ncols(), idx % leaf.ncols());
                let mut plus = leaves.clone();
                plus[li][[r, c]] += h;
                let mut minus = leaves.clone();
                minus[li][[r, c]] -= h;
                let (gp, _, op) = eval(&plus);
                let (gm, _, om) = eval(&minus);
                let numeric = (gp.scalar(op) - gm.scalar(om)) / (2.0 * h);
                let a = analytic[[r, c]];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                assert!(err < 1e-5, "leaf {li} [{r},{c}]: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn matmul_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let leaves = vec![random(3, 4, &mut rng), random(4, 2, &mut rng), random(5, 4, &mut rng)];
        check(leaves, |g, v| {
            let ab = g.matmul(v[0], v[1]);
            let ct = g.matmul_t(v[2], v[0]);
            let ct = g.transpose(ct);
            let s1 = g.sum(ab);
            let t = g.tanh(ct);
            let s2 = g.mean(t);
            let m = g.mul(s1, s2);
            g.add(m, s1)
        });
    }

    #[test]
    fn elementwise_and_broadcast() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let leaves = vec![random(4, 3, &mut rng), random(1, 3, &mut rng), random(1, 1, &mut rng)];
        check(leaves, |g, v| {
            let x = g.add_row(v[0], v[1]);
            let a = g.gelu(x);
            let b = g.sigmoid(x);
            let c = g.softplus(a);
            let d = g.sub(c, b);
            let e = g.scalar_mul(d, v[2]);
            let tau = g.clamped_exp(v[2], 0.01, 100.0);
            let f = g.scalar_div(e, tau);
            let n = g.normalize_rows(f);
            let o = g.one_minus(n);
            let sq = g.mul(o, o);
            g.sum(sq)
        });
    }

    #[test]
    fn gather_concat_rowdot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let leaves = vec![random(5, 3, &mut rng), random(2, 3, &mut rng)];
        check(leaves, |g, v| {
            let a = g.gather_rows(v[0], vec![4, 0, 4, 2]);
            let b = g.concat_rows(&[v[1], v[1]]);
            let c = g.concat_rows(&[b, v[0]]);
            let c = g.gather_rows(c, vec![0, 3, 5, 6]);
            let d = g.row_dot(a, c);
            let e = g.tanh(d);
            g.sum(e)
        });
    }

    #[test]
    fn layer_norm_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let leaves = vec![random(3, 6, &mut rng), random(1, 6, &mut rng), random(1, 6, &mut rng), random(3, 6, &mut rng)];
        check(leaves, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2]);
            let w = g.mul(y, v[3]);
            let t = g.tanh(w);
            g.sum(t)
        });
    }

    #[test]
    fn attention_grad_causal_and_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for causal in [true, false] {
            let leaves = vec![random(7, 4, &mut rng), random(7, 4, &mut rng), random(7, 4, &mut rng), random(7, 4, &mut rng)];
            check(leaves, |g, v| {
                let segs: Rc<[Segment]> = pack_segments([3, 1, 3]).into();
                let a = g.attention(v[0], v[1], v[2], segs.clone(), 2, causal);
                let m = g.segment_mean(a, segs);
                let w = g.mul(a, v[3]);
                let s1 = g.sum(w);
                let s2 = g.sum(m);
                let t = g.tanh(s2);
                g.add(s1, t)
            });
        }
    }

    #[test]
    fn contrastive_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for include in [false, true] {
            let leaves = vec![random(4, 4, &mut rng)];
            check(leaves, |g, v| g.contrastive(v[0], include));
        }
    }

    #[test]
    fn causal_attention_ignores_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (q, k, v) = (random(4, 2, &mut rng), random(4, 2, &mut rng), random(4, 2, &mut rng));
        let run = |k: Mat, v: Mat| {
            let mut g = Graph::new();
            let (qa, ka, va) = (g.input(q.clone()), g.input(k), g.input(v));
            let out = g.attention(qa, ka, va, pack_segments([4]).into(), 1, true);
            g.value(out).clone()
        };
        let base = run(k.clone(), v.clone());
        let (mut k2, mut v2) = (k, v);
        k2.row_mut(3).fill(9.0);
        v2.row_mut(3).fill(-9.0);
        let changed = run(k2, v2);
        assert_eq!(base.slice(s![..3, ..]), changed.slice(s![..3, ..]));
        assert_ne!(base.row(3), changed.row(3));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.input(Mat::ones((2, 2)));
        let p = g.param(Mat::ones((2, 2)));
        let m = g.mul(c, p);
        let s = g.sum(m);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &Mat::ones((2, 2)));
    }
}
