use rand::Rng;

use super::kernels::{self, split_axis};
use super::tensor::Tensor;
use crate::error::{arg_err, shape_err, Error, Result};

/// Negative slope of every leaky-ReLU in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Denominator guard of the suppression cosine.
pub const COS_EPS: f64 = 1e-8;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    LeakyRelu,
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Binary { kind: BinaryKind, a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Unary { kind: UnaryKind, x: Var },
    Softmax { x: Var, axis: usize },
    HardSoftmax { x: Var, axis: usize, probs: Vec<f64> },
    Reduce { x: Var, axis: usize, kind: ReduceKind, argmax: Vec<usize> },
    Expand { x: Var },
    Concat { xs: Vec<Var>, axis: usize },
    Reshape { x: Var },
    Transpose { x: Var },
    Narrow { x: Var, axis: usize, start: usize },
    Gather { x: Var, index: Vec<usize>, weights: Option<Vec<f64>>, arity: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    CosineError { pred: Var, target: Var },
    Suppression { support: Var, cand: Var, cos_threshold: f64 },
    L2NormalizeCols { x: Var },
    ColumnNorm { x: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Reverse-mode tape. Nodes are appended in execution order, so the node
/// list is already a topological order; [`Graph::backward`] visits it once
/// in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    relaxed_selection: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// In relaxed mode [`Graph::hard_softmax_st`] emits the softmax itself
    /// instead of the one-hot vector. The backward pass is the same code in
    /// both modes, so finite differences on a relaxed graph exercise every
    /// gradient path the straight-through estimator uses.
    pub fn set_relaxed_selection(&mut self, relaxed: bool) {
        self.relaxed_selection = relaxed;
    }

    pub fn relaxed_selection(&self) -> bool {
        self.relaxed_selection
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tracked leaf (receives a gradient).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records an untracked leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shape(v).to_vec(), g.clone()).ok()
    }

    /// Clears gradients so that backward may run again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn any_tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = self.any_tracked(inputs);
        self.push(value, op, tracked)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return arg_err(op, format!("axis {axis} out of range for {:?}", self.shape(x)));
        }
        Ok(())
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return shape_err("matmul", format!("{m}×{k} · {k2}×{n}"));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new([m, n], out)?;
        Ok(self.record(t, Op::MatMul { a, b }, &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::new([c, r], out)?;
        Ok(self.record(t, Op::Transpose { x }, &[x]))
    }

    // ---- elementwise ----------------------------------------------------

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return shape_err(op, format!("rank {:?} vs {:?}", sa, sb));
        }
        sa.iter()
            .zip(sb)
            .map(|(&x, &y)| match (x, y) {
                _ if x == y => Ok(x),
                (1, y) => Ok(y),
                (x, 1) => Ok(x),
                _ => shape_err(op, format!("cannot broadcast {:?} with {:?}", sa, sb)),
            })
            .collect()
    }

    /// Elementwise binary op with size-1 broadcasting on equal-rank operands.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("binary", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; shape.iter().product()];
        if va.shape() == vb.shape() {
            let (da, db) = (va.data(), vb.data());
            for (i, o) in out.iter_mut().enumerate() {
                *o = apply(kind, da[i], db[i]);
            }
        } else {
            let (da, db) = (va.data(), vb.data());
            let (sa, sb) = (va.shape(), vb.shape());
            match kind {
                BinaryKind::Add => kernels::broadcast_for_each(&shape, sa, sb, |o, ia, ib| out[o] = da[ia] + db[ib]),
                BinaryKind::Sub => kernels::broadcast_for_each(&shape, sa, sb, |o, ia, ib| out[o] = da[ia] - db[ib]),
                BinaryKind::Mul => kernels::broadcast_for_each(&shape, sa, sb, |o, ia, ib| out[o] = da[ia] * db[ib]),
                BinaryKind::Div => kernels::broadcast_for_each(&shape, sa, sb, |o, ia, ib| out[o] = da[ia] / db[ib]),
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.record(t, Op::Binary { kind, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = Tensor::from_fn(self.shape(x).to_vec(), |i| c * self.value(x).data()[i]);
        self.record(t, Op::Scale { x, c }, &[x])
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let src = self.value(x);
        let d = src.data();
        let out: Vec<f64> = match kind {
            UnaryKind::LeakyRelu => d.iter().map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v }).collect(),
            UnaryKind::Relu => d.iter().map(|&v| v.max(0.0)).collect(),
            UnaryKind::Sigmoid => d.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        };
        let t = Tensor::new(src.shape().to_vec(), out).expect("same shape");
        self.record(t, Op::Unary { kind, x }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::LeakyRelu, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    /// Broadcasts `x` up to `shape` (same rank, size-1 extents stretched).
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x);
        if src.len() != shape.len() || src.iter().zip(shape).any(|(&s, &t)| s != t && s != 1) {
            return shape_err("expand", format!("{src:?} -> {shape:?}"));
        }
        let mut out = vec![0.0; shape.iter().product()];
        let data = self.value(x).data();
        kernels::broadcast_for_each(shape, src, shape, |o, ia, _| out[o] = data[ia]);
        let t = Tensor::new(shape.to_vec(), out)?;
        Ok(self.record(t, Op::Expand { x }, &[x]))
    }

    // ---- normalisation along an axis ------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let (o, l, i) = split_axis(self.shape(x), axis);
        let y = kernels::softmax_axis(self.value(x).data(), o, l, i);
        let t = Tensor::new(self.shape(x).to_vec(), y)?;
        Ok(self.record(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Deterministic straight-through gumbel-softmax: the forward pass emits
    /// the one-hot vector of the argmax along `axis` (lowest index on ties),
    /// the backward pass is the softmax gradient.
    pub fn hard_softmax_st(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("hard_softmax_st", x, axis)?;
        if self.value(x).data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "hard_softmax_st" });
        }
        let (o, l, i) = split_axis(self.shape(x), axis);
        let probs = kernels::softmax_axis(self.value(x).data(), o, l, i);
        let y = if self.relaxed_selection {
            probs.clone()
        } else {
            let arg = kernels::argmax_axis(self.value(x).data(), o, l, i);
            let mut y = vec![0.0; probs.len()];
            for oo in 0..o {
                for j in 0..i {
                    y[oo * l * i + arg[oo * i + j] * i + j] = 1.0;
                }
            }
            y
        };
        let t = Tensor::new(self.shape(x).to_vec(), y)?;
        Ok(self.record(t, Op::HardSoftmax { x, axis, probs }, &[x]))
    }

    /// Reduces along `axis`, keeping it with extent 1.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        self.check_axis("reduce", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (o, l, inn) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; o * inn];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean if inn == 1 => {
                for (acc, row) in out.iter_mut().zip(src.chunks_exact(l)) {
                    *acc = row.iter().fold(0.0, |a, v| a + v);
                }
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v /= l as f64);
                }
            }
            ReduceKind::Sum | ReduceKind::Mean => {
                for oo in 0..o {
                    for i in 0..l {
                        let row = &src[(oo * l + i) * inn..(oo * l + i + 1) * inn];
                        for (acc, &v) in out[oo * inn..(oo + 1) * inn].iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v /= l as f64);
                }
            }
            ReduceKind::Max => {
                argmax = kernels::argmax_axis(src, o, l, inn);
                for oo in 0..o {
                    for j in 0..inn {
                        out[oo * inn + j] = src[oo * l * inn + argmax[oo * inn + j] * inn + j];
                    }
                }
            }
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        let t = Tensor::new(oshape, out)?;
        Ok(self.record(t, Op::Reduce { x, axis, kind, argmax }, &[x]))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, ReduceKind::Sum)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, ReduceKind::Mean)
    }

    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, ReduceKind::Max)
    }

    /// Sum of every element as a `[1]` tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, &[n])?;
        self.sum_axis(flat, 0)
    }

    // ---- structural -----------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.record(t, Op::Reshape { x }, &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return arg_err("concat", "no inputs");
        };
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == base.len() && (0..s.len()).all(|d| d == axis || s[d] == base[d]);
            if !ok {
                return shape_err("concat", format!("{:?} vs {:?} on axis {axis}", base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let l = self.shape(x)[axis];
                out.extend_from_slice(&self.value(x).data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        Ok(self.record(t, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("narrow", x, axis)?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return arg_err("narrow", format!("[{start}, {}) on extent {}", start + len, shape[axis]));
        }
        let (outer, l, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * l + start) * inner..(o * l + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let t = Tensor::new(oshape, out)?;
        Ok(self.record(t, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Columns of a `C×P` matrix picked by `index`, giving `C×index.len()`.
    pub fn gather_cols(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        self.gather_impl(x, index.to_vec(), None, 1)
    }

    /// `out[:, m] = Σ_t weights[m·arity + t] · x[:, index[m·arity + t]]`.
    pub fn weighted_gather_cols(&mut self, x: Var, index: &[usize], weights: &[f64], arity: usize) -> Result<Var> {
        if arity == 0 || index.len() != weights.len() || !index.len().is_multiple_of(arity) {
            return arg_err("weighted_gather_cols", "index/weights/arity disagree");
        }
        self.gather_impl(x, index.to_vec(), Some(weights.to_vec()), arity)
    }

    fn gather_impl(&mut self, x: Var, index: Vec<usize>, weights: Option<Vec<f64>>, arity: usize) -> Result<Var> {
        let (c, p) = self.value(x).dims2()?;
        if let Some(&bad) = index.iter().find(|&&i| i >= p) {
            return arg_err("gather_cols", format!("index {bad} out of range for {p} columns"));
        }
        if index.is_empty() {
            return arg_err("gather_cols", "empty index");
        }
        let m = index.len() / arity;
        let src = self.value(x).data();
        let mut out = vec![0.0; c * m];
        for r in 0..c {
            let srow = &src[r * p..(r + 1) * p];
            let orow = &mut out[r * m..(r + 1) * m];
            for (mi, o) in orow.iter_mut().enumerate() {
                *o = match &weights {
                    None => srow[index[mi]],
                    Some(w) => (0..arity).map(|t| w[mi * arity + t] * srow[index[mi * arity + t]]).sum(),
                };
            }
        }
        let t = Tensor::new([c, m], out)?;
        Ok(self.record(t, Op::Gather { x, index, weights, arity }, &[x]))
    }

    // ---- fused losses and special ops ----------------------------------

    /// Mean cross entropy of `logits[classes×B]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (k, b) = self.value(logits).dims2()?;
        if labels.len() != b {
            return shape_err("cross_entropy", format!("{b} columns, {} labels", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return arg_err("cross_entropy", format!("label {bad} with {k} classes"));
        }
        let probs = kernels::softmax_axis(self.value(logits).data(), 1, k, b);
        let x = self.value(logits).data();
        let mut loss = 0.0;
        for (col, &lab) in labels.iter().enumerate() {
            // log-softmax through the max for stability
            let m = (0..k).map(|r| x[r * b + col]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..k).map(|r| (x[r * b + col] - m).exp()).sum::<f64>().ln();
            loss += lse - x[lab * b + col];
        }
        let t = Tensor::scalar(loss / b as f64);
        Ok(self.record(t, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, &[logits]))
    }

    /// Mean over columns of `1 − |cos∠(pred, target)|`; a zero-norm column
    /// counts as cosine 0.
    pub fn cosine_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (d, p) = self.value(pred).dims2()?;
        if self.shape(target) != [d, p] {
            return shape_err("cosine_error", format!("{:?} vs {:?}", self.shape(pred), self.shape(target)));
        }
        let (a, t) = (self.value(pred).data(), self.value(target).data());
        let mut total = 0.0;
        for col in 0..p {
            let (c, ..) = column_cos(a, t, d, p, col);
            total += 1.0 - c.abs();
        }
        let out = Tensor::scalar(total / p as f64);
        Ok(self.record(out, Op::CosineError { pred, target }, &[pred, target]))
    }

    /// Crossover suppression multipliers.
    ///
    /// `support` is `C×n` (one direction per curve), `cand` is `C×n×k`. For
    /// each curve and candidate the cosine `cos = ⟨c, q⟩ / (‖c‖‖q‖ + ε)` maps
    /// to `d = 1` when `cos ≥ cos_threshold`, else `clamp(cos + 1, 0, 1)`.
    /// A zero support vector leaves every candidate at `d = 1`.
    pub fn suppression(&mut self, support: Var, cand: Var, cos_threshold: f64) -> Result<Var> {
        let (c, n) = self.value(support).dims2()?;
        let cs = self.shape(cand);
        if cs.len() != 3 || cs[0] != c || cs[1] != n {
            return shape_err("suppression", format!("support {c}×{n}, candidates {cs:?}"));
        }
        let k = cs[2];
        let (sv, qv) = (self.value(support).data(), self.value(cand).data());
        let mut out = vec![1.0; n * k];
        for curve in 0..n {
            let cn = (0..c).map(|r| sv[r * n + curve].powi(2)).sum::<f64>().sqrt();
            if cn == 0.0 {
                continue;
            }
            for j in 0..k {
                let (cos, ..) = suppression_cos(sv, qv, c, n, k, curve, j);
                out[curve * k + j] = if cos >= cos_threshold { 1.0 } else { (cos + 1.0).clamp(0.0, 1.0) };
            }
        }
        let t = Tensor::new([n, k], out)?;
        Ok(self.record(t, Op::Suppression { support, cand, cos_threshold }, &[support, cand]))
    }

    /// Scales every column of a matrix to unit Euclidean norm; zero columns
    /// stay zero.
    pub fn l2_normalize_cols(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for col in 0..c {
            let n = (0..r).map(|i| src[i * c + col].powi(2)).sum::<f64>().sqrt();
            if n > 0.0 {
                for i in 0..r {
                    out[i * c + col] = src[i * c + col] / n;
                }
            }
        }
        let t = Tensor::new([r, c], out)?;
        Ok(self.record(t, Op::L2NormalizeCols { x }, &[x]))
    }

    /// Per-row standardisation over the columns of a `C×M` matrix
    /// (`(x − mean) / sqrt(var + eps)`), without affine terms.
    pub fn column_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean) * is;
            }
        }
        let t = Tensor::new([r, c], xhat.clone())?;
        Ok(self.record(t, Op::ColumnNorm { x, xhat, inv_std }, &[x]))
    }

    /// Inverted dropout. Identity unless `training` and `p > 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return arg_err("dropout", format!("p = {p} outside [0, 1)"));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(self.shape(x).to_vec(), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
        let m = self.constant(mask);
        self.mul(x, m)
    }

    // ---- backward -------------------------------------------------------

    /// Accumulates `d loss / d v` into every tracked node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].tracked {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = self.grads[id].take() else { continue };
            if !matches!(self.nodes[id].op, Op::Leaf) {
                self.backprop_node(id, &g);
            }
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, id: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let value = |v: Var| &nodes[v.0].value;
        let out = &nodes[id].value;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = value(*a).dims2().expect("rank checked");
                let n = value(*b).shape()[1];
                if let Some(da) = slot(nodes, grads, *a) {
                    kernels::matmul_grad_a(g, value(*b).data(), da, m, k, n);
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    kernels::matmul_grad_b(value(*a).data(), g, db, m, k, n);
                }
            }
            Op::Transpose { x } => {
                let (r, c) = value(*x).dims2().expect("rank checked");
                if let Some(dx) = slot(nodes, grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Binary { kind, a, b } => {
                let (va, vb) = (value(*a), value(*b));
                let (av, bv) = (va.data(), vb.data());
                let kind = *kind;
                let (so, sa, sb) = (out.shape(), va.shape(), vb.shape());
                if let Some(da) = slot(nodes, grads, *a) {
                    match kind {
                        BinaryKind::Add | BinaryKind::Sub => kernels::broadcast_for_each(so, sa, sb, |o, ia, _| da[ia] += g[o]),
                        BinaryKind::Mul => kernels::broadcast_for_each(so, sa, sb, |o, ia, ib| da[ia] += g[o] * bv[ib]),
                        BinaryKind::Div => kernels::broadcast_for_each(so, sa, sb, |o, ia, ib| da[ia] += g[o] / bv[ib]),
                    }
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    match kind {
                        BinaryKind::Add => kernels::broadcast_for_each(so, sa, sb, |o, _, ib| db[ib] += g[o]),
                        BinaryKind::Sub => kernels::broadcast_for_each(so, sa, sb, |o, _, ib| db[ib] -= g[o]),
                        BinaryKind::Mul => kernels::broadcast_for_each(so, sa, sb, |o, ia, ib| db[ib] += g[o] * av[ia]),
                        BinaryKind::Div => {
                            kernels::broadcast_for_each(so, sa, sb, |o, ia, ib| db[ib] -= g[o] * av[ia] / (bv[ib] * bv[ib]))
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, gv)| *d += c * gv);
                }
            }
            Op::Unary { kind, x } => {
                let (xv, yv) = (value(*x).data(), out.data());
                if let Some(dx) = slot(nodes, grads, *x) {
                    for i in 0..dx.len() {
                        let local = match kind {
                            UnaryKind::LeakyRelu if xv[i] > 0.0 => 1.0,
                            UnaryKind::LeakyRelu => LEAKY_SLOPE,
                            UnaryKind::Relu if xv[i] > 0.0 => 1.0,
                            UnaryKind::Relu => 0.0,
                            UnaryKind::Sigmoid => yv[i] * (1.0 - yv[i]),
                        };
                        dx[i] += g[i] * local;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (o, l, i) = split_axis(value(*x).shape(), *axis);
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::softmax_axis_grad(out.data(), g, dx, o, l, i);
                }
            }
            Op::HardSoftmax { x, axis, probs } => {
                let (o, l, i) = split_axis(value(*x).shape(), *axis);
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::softmax_axis_grad(probs, g, dx, o, l, i);
                }
            }
            Op::Reduce { x, axis, kind, argmax } => {
                let (o, l, inn) = split_axis(value(*x).shape(), *axis);
                if let Some(dx) = slot(nodes, grads, *x) {
                    match kind {
                        ReduceKind::Sum | ReduceKind::Mean if inn == 1 => {
                            let s = if *kind == ReduceKind::Mean { 1.0 / l as f64 } else { 1.0 };
                            for (row, gv) in dx.chunks_exact_mut(l).zip(g) {
                                row.iter_mut().for_each(|d| *d += s * gv);
                            }
                        }
                        ReduceKind::Sum | ReduceKind::Mean => {
                            let s = if *kind == ReduceKind::Mean { 1.0 / l as f64 } else { 1.0 };
                            for oo in 0..o {
                                for i in 0..l {
                                    let row = &mut dx[(oo * l + i) * inn..(oo * l + i + 1) * inn];
                                    for (d, gv) in row.iter_mut().zip(&g[oo * inn..(oo + 1) * inn]) {
                                        *d += s * gv;
                                    }
                                }
                            }
                        }
                        ReduceKind::Max => {
                            for oo in 0..o {
                                for j in 0..inn {
                                    dx[oo * l * inn + argmax[oo * inn + j] * inn + j] += g[oo * inn + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Expand { x } => {
                let src = value(*x).shape();
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::broadcast_for_each(out.shape(), src, out.shape(), |o, ia, _| dx[ia] += g[o]);
                }
            }
            Op::Reshape { x } => accumulate(nodes, grads, *x, g),
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let l = value(x).shape()[*axis];
                    if let Some(dx) = slot(nodes, grads, x) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + l) * inner];
                            for (d, gv) in dx[o * l * inner..(o + 1) * l * inner].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                    offset += l;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, l, inner) = split_axis(value(*x).shape(), *axis);
                let len = out.shape()[*axis];
                if let Some(dx) = slot(nodes, grads, *x) {
                    for o in 0..outer {
                        let dst = &mut dx[(o * l + start) * inner..(o * l + start + len) * inner];
                        for (d, gv) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Gather { x, index, weights, arity } => {
                let (c, p) = value(*x).dims2().expect("rank checked");
                let m = index.len() / arity;
                if let Some(dx) = slot(nodes, grads, *x) {
                    for r in 0..c {
                        let grow = &g[r * m..(r + 1) * m];
                        let drow = &mut dx[r * p..(r + 1) * p];
                        for (mi, gv) in grow.iter().enumerate() {
                            for t in 0..*arity {
                                let w = weights.as_ref().map_or(1.0, |w| w[mi * arity + t]);
                                drow[index[mi * arity + t]] += w * gv;
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (k, b) = value(*logits).dims2().expect("rank checked");
                let s = g[0] / b as f64;
                if let Some(dx) = slot(nodes, grads, *logits) {
                    for r in 0..k {
                        for col in 0..b {
                            let y = if labels[col] == r { 1.0 } else { 0.0 };
                            dx[r * b + col] += s * (probs[r * b + col] - y);
                        }
                    }
                }
            }
            Op::CosineError { pred, target } => {
                let (d, p) = value(*pred).dims2().expect("rank checked");
                let (a, t) = (value(*pred).data(), value(*target).data());
                let s = -g[0] / p as f64;
                let mut da = vec![0.0; d * p];
                let mut dt = vec![0.0; d * p];
                for col in 0..p {
                    let (cos, an, tn) = column_cos(a, t, d, p, col);
                    if an == 0.0 || tn == 0.0 {
                        continue;
                    }
                    // d|cos| = sign(cos) dcos
                    let sg = if cos > 0.0 {
                        1.0
                    } else if cos < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    for r in 0..d {
                        let (ai, ti) = (a[r * p + col], t[r * p + col]);
                        da[r * p + col] = s * sg * (ti / (an * tn) - cos * ai / (an * an));
                        dt[r * p + col] = s * sg * (ai / (an * tn) - cos * ti / (tn * tn));
                    }
                }
                if let Some(dx) = slot(nodes, grads, *pred) {
                    dx.iter_mut().zip(&da).for_each(|(x, y)| *x += y);
                }
                if let Some(dx) = slot(nodes, grads, *target) {
                    dx.iter_mut().zip(&dt).for_each(|(x, y)| *x += y);
                }
            }
            Op::Suppression { support, cand, cos_threshold } => {
                let (c, n) = value(*support).dims2().expect("rank checked");
                let k = value(*cand).shape()[2];
                let (sv, qv) = (value(*support).data(), value(*cand).data());
                let mut ds = vec![0.0; c * n];
                let mut dq = vec![0.0; c * n * k];
                for curve in 0..n {
                    let cn = (0..c).map(|r| sv[r * n + curve].powi(2)).sum::<f64>().sqrt();
                    if cn == 0.0 {
                        continue;
                    }
                    for j in 0..k {
                        let (cos, dot, qn) = suppression_cos(sv, qv, c, n, k, curve, j);
                        // flat at 1 above the threshold and outside the clamp range
                        let inside = cos < *cos_threshold && cos + 1.0 > 0.0 && cos + 1.0 < 1.0;
                        if !inside {
                            continue;
                        }
                        let gd = g[curve * k + j];
                        let den = cn * qn + COS_EPS;
                        for r in 0..c {
                            let s = sv[r * n + curve];
                            let q = qv[(r * n + curve) * k + j];
                            ds[r * n + curve] += gd * (q / den - dot * qn * s / (cn * den * den));
                            if qn > 0.0 {
                                dq[(r * n + curve) * k + j] += gd * (s / den - dot * cn * q / (qn * den * den));
                            }
                        }
                    }
                }
                if let Some(dx) = slot(nodes, grads, *support) {
                    dx.iter_mut().zip(&ds).for_each(|(x, y)| *x += y);
                }
                if let Some(dx) = slot(nodes, grads, *cand) {
                    dx.iter_mut().zip(&dq).for_each(|(x, y)| *x += y);
                }
            }
            Op::L2NormalizeCols { x } => {
                let (r, c) = value(*x).dims2().expect("rank checked");
                let (xv, y) = (value(*x).data(), out.data());
                if let Some(dx) = slot(nodes, grads, *x) {
                    for col in 0..c {
                        let n = (0..r).map(|i| xv[i * c + col].powi(2)).sum::<f64>().sqrt();
                        if n == 0.0 {
                            continue;
                        }
                        let yg: f64 = (0..r).map(|i| y[i * c + col] * g[i * c + col]).sum();
                        for i in 0..r {
                            dx[i * c + col] += (g[i * c + col] - y[i * c + col] * yg) / n;
                        }
                    }
                }
            }
            Op::ColumnNorm { x, xhat, inv_std } => {
                let (r, c) = value(*x).dims2().expect("rank checked");
                if let Some(dx) = slot(nodes, grads, *x) {
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        let xr = &xhat[i * c..(i + 1) * c];
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgx = kernels::dot(gr, xr) / c as f64;
                        for j in 0..c {
                            dx[i * c + j] += inv_std[i] * (gr[j] - mg - xr[j] * mgx);
                        }
                    }
                }
            }
        }
    }
}

/// Gradient accumulator of `v`, allocated on first use; `None` when `v` is
/// untracked.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.tracked {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
}

/// `grad(v) += g` for an input of the same size, copying on first touch.
fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    if !nodes[v.0].tracked {
        return;
    }
    match &mut grads[v.0] {
        Some(d) => d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn apply(kind: BinaryKind, a: f64, b: f64) -> f64 {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
        BinaryKind::Div => a / b,
    }
}

/// `(cos, ‖a‖, ‖t‖)` of column `col`; cosine is 0 if either norm is 0.
fn column_cos(a: &[f64], t: &[f64], d: usize, p: usize, col: usize) -> (f64, f64, f64) {
    let (mut dot, mut an, mut tn) = (0.0, 0.0, 0.0);
    for r in 0..d {
        let (x, y) = (a[r * p + col], t[r * p + col]);
        dot += x * y;
        an += x * x;
        tn += y * y;
    }
    let (an, tn) = (an.sqrt(), tn.sqrt());
    if an == 0.0 || tn == 0.0 {
        (0.0, an, tn)
    } else {
        (dot / (an * tn), an, tn)
    }
}

/// `(cos, ⟨c, q⟩, ‖q‖)` for curve `curve`, candidate `j`.
fn suppression_cos(sv: &[f64], qv: &[f64], c: usize, n: usize, k: usize, curve: usize, j: usize) -> (f64, f64, f64) {
    let (mut dot, mut cn, mut qn) = (0.0, 0.0, 0.0);
    for r in 0..c {
        let s = sv[r * n + curve];
        let q = qv[(r * n + curve) * k + j];
        dot += s * q;
        cn += s * s;
        qn += q * q;
    }
    let (cn, qn) = (cn.sqrt(), qn.sqrt());
    (dot / (cn * qn + COS_EPS), dot, qn)
}
