//! Append-only computation graph with reverse-mode differentiation.
//!
//! Every op records its inputs plus whatever it needs for the backward
//! pass. Inputs always precede outputs, so a single reverse sweep over
//! the node list visits each node once in a valid order.

use super::tensor::{Scalar, Tensor};
use super::DiffError;

const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: NodeId },
    MatMul { a: NodeId, b: NodeId },
    MatMulNt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Scale { a: NodeId, s: T },
    Relu { a: NodeId },
    Softmax { a: NodeId },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    MaxGroups { a: NodeId, argmax: Vec<usize> },
    ConcatCols { a: NodeId, b: NodeId },
    ConcatRows { a: NodeId, b: NodeId },
    GatherRows { a: NodeId, idx: Vec<usize> },
    SliceCols { a: NodeId, start: usize },
    Reshape { a: NodeId },
    SumAll { a: NodeId },
    Chamfer {
        a: NodeId,
        b: NodeId,
        nn_ab: Vec<usize>,
        nn_ba: Vec<usize>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::MatMul { .. } => "matmul",
            Op::MatMulNt { .. } => "matmul_nt",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Scale { .. } => "scale",
            Op::Relu { .. } => "relu",
            Op::Softmax { .. } => "softmax",
            Op::BatchNorm { .. } => "batchnorm",
            Op::MaxGroups { .. } => "maxpool",
            Op::ConcatCols { .. } => "concat_cols",
            Op::ConcatRows { .. } => "concat_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape { .. } => "reshape",
            Op::SumAll { .. } => "sum",
            Op::Chamfer { .. } => "chamfer",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-feature batch statistics from a training-mode batchnorm: the
/// mean and the unbiased variance, used to update running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Normalization source for [`Graph::batchnorm`].
pub enum BnMode<'a, T> {
    Train,
    Eval { mean: &'a [T], var: &'a [T] },
}

#[derive(Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    track_decisions: bool,
    fingerprint: u64,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn shape_err(msg: String) -> DiffError {
    DiffError::ShapeMismatch(msg)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            track_decisions: false,
            fingerprint: FNV_OFFSET,
        }
    }

    /// Records a hash of every discrete choice (ReLU masks, max-pool
    /// winners, Chamfer nearest neighbors). Two evaluations with equal
    /// fingerprints run through the same smooth piece of the function.
    pub fn with_decision_tracking() -> Self {
        Self {
            track_decisions: true,
            ..Self::new()
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn record(&mut self, bits: impl IntoIterator<Item = usize>) {
        if !self.track_decisions {
            return;
        }
        let mut h = self.fingerprint;
        for b in bits {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.fingerprint = h;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite(op.name()));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<NodeId, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite("leaf"));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// A gradient-tracked leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<NodeId, DiffError> {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId, DiffError> {
        self.leaf(value, false)
    }

    fn matrix_dims(&self, id: NodeId, what: &str) -> Result<(usize, usize), DiffError> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(shape_err(format!("{what}: expected a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    /// `y = x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (n, inp) = self.matrix_dims(x, "linear input")?;
        let (win, out) = self.matrix_dims(w, "linear weight")?;
        if win != inp || self.value(b).len() != out {
            return Err(shape_err(format!(
                "linear: x {:?}, W {:?}, b {:?}",
                self.shape(x),
                self.shape(w),
                self.shape(b)
            )));
        }
        let mut y = Vec::with_capacity(n * out);
        {
            let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
            for i in 0..n {
                y.extend_from_slice(bv);
                let yr = &mut y[i * out..(i + 1) * out];
                for (k, &xik) in xv[i * inp..(i + 1) * inp].iter().enumerate() {
                    if xik == T::zero() {
                        continue;
                    }
                    for (yj, &wkj) in yr.iter_mut().zip(&wv[k * out..(k + 1) * out]) {
                        *yj += xik * wkj;
                    }
                }
            }
        }
        self.push(Tensor::new(&[n, out], y)?, Op::Linear { x, w, b }, &[x, w, b])
    }

    /// `a: [n, k]` times `b: [k, m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (n, k) = self.matrix_dims(a, "matmul lhs")?;
        let (bk, m) = self.matrix_dims(b, "matmul rhs")?;
        if bk != k {
            return Err(shape_err(format!("matmul: [{n}, {k}] x [{bk}, {m}]")));
        }
        let mut y = vec![T::zero(); n * m];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            matmul_acc(av, bv, &mut y, n, k, m);
        }
        self.push(Tensor::new(&[n, m], y)?, Op::MatMul { a, b }, &[a, b])
    }

    /// `a: [n, d]` times the transpose of `b: [m, d]`, giving `[n, m]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (n, d) = self.matrix_dims(a, "matmul_nt lhs")?;
        let (m, bd) = self.matrix_dims(b, "matmul_nt rhs")?;
        if bd != d {
            return Err(shape_err(format!("matmul_nt: [{n}, {d}] x [{m}, {bd}]^T")));
        }
        let mut y = Vec::with_capacity(n * m);
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..n {
                let ar = &av[i * d..(i + 1) * d];
                for j in 0..m {
                    y.push(dot(ar, &bv[j * d..(j + 1) * d]));
                }
            }
        }
        self.push(Tensor::new(&[n, m], y)?, Op::MatMulNt { a, b }, &[a, b])
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, data)?, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, data)?, Op::Sub { a, b }, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId, DiffError> {
        let s = T::of(s);
        let v = self.value(a);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&x| x * s).collect())?;
        self.push(out, Op::Scale { a, s }, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let v = self.value(a);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&x| x.max(T::zero())).collect())?;
        if self.track_decisions {
            let mask: Vec<usize> = self.value(a).data().iter().map(|&x| (x > T::zero()) as usize).collect();
            self.record(mask);
        }
        self.push(out, Op::Relu { a }, &[a])
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let v = self.value(a);
        let c = v.cols();
        let mut y = Vec::with_capacity(v.len());
        for row in v.data().chunks_exact(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = y.len();
            let mut sum = T::zero();
            for &x in row {
                let e = (x - m).exp();
                sum += e;
                y.push(e);
            }
            for e in &mut y[start..] {
                *e = *e / sum;
            }
        }
        let out = Tensor::new(v.shape(), y)?;
        self.push(out, Op::Softmax { a }, &[a])
    }

    /// Batch normalization of `x: [n, c]` over its rows.
    ///
    /// Training mode normalizes with the batch statistics and returns them;
    /// evaluation mode uses the supplied running statistics.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BnMode<'_, T>,
    ) -> Result<(NodeId, Option<BatchStats<T>>), DiffError> {
        let (n, c) = self.matrix_dims(x, "batchnorm input")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err(format!(
                "batchnorm: {c} features but gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let xv = self.value(x).data();
        let (mean, var_biased, stats) = match mode {
            BnMode::Train => {
                if n < 2 {
                    return Err(DiffError::DegenerateBatch(n));
                }
                let mut mean = vec![0f64; c];
                for row in xv.chunks_exact(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v.f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0f64; c];
                for row in xv.chunks_exact(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v.f64() - m;
                        *s += d * d;
                    }
                }
                let biased: Vec<f64> = var.iter().map(|s| s / n as f64).collect();
                let stats = BatchStats {
                    mean: mean.iter().map(|&m| T::of(m)).collect(),
                    var: var.iter().map(|s| T::of(s / (n - 1) as f64)).collect(),
                };
                (mean, biased, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err(format!("batchnorm: running stats for {} features", mean.len())));
                }
                (
                    mean.iter().map(|m| m.f64()).collect(),
                    var.iter().map(|v| v.f64()).collect(),
                    None,
                )
            }
        };
        let inv_std: Vec<T> = var_biased.iter().map(|v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(n * c);
        let mut y = Vec::with_capacity(n * c);
        for row in xv.chunks_exact(c) {
            for j in 0..c {
                let h = (row[j] - mean_t[j]) * inv_std[j];
                xhat.push(h);
                y.push(gv[j] * h + bv[j]);
            }
        }
        let train = stats.is_some();
        let id = self.push(
            Tensor::new(&[n, c], y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        )?;
        Ok((id, stats))
    }

    /// Column-wise max over consecutive row groups: `[n * group, c] -> [n, c]`.
    /// Equal values resolve to the earliest row.
    pub fn max_groups(&mut self, a: NodeId, group: usize) -> Result<NodeId, DiffError> {
        let (rows, c) = self.matrix_dims(a, "maxpool input")?;
        if group == 0 || rows % group != 0 {
            return Err(shape_err(format!("maxpool: {rows} rows in groups of {group}")));
        }
        let n = rows / group;
        let av = self.value(a).data();
        let mut y = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for g in 0..n {
            for j in 0..c {
                let mut best = g * group;
                let mut bv = av[best * c + j];
                for r in g * group + 1..(g + 1) * group {
                    let v = av[r * c + j];
                    if v > bv {
                        bv = v;
                        best = r;
                    }
                }
                y.push(bv);
                argmax.push(best);
            }
        }
        self.record(argmax.iter().copied());
        self.push(Tensor::new(&[n, c], y)?, Op::MaxGroups { a, argmax }, &[a])
    }

    /// Max over all tokens: `[t, c] -> [c]`.
    pub fn maxpool_tokens(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (t, c) = self.matrix_dims(a, "maxpool input")?;
        let pooled = self.max_groups(a, t)?;
        self.reshape(pooled, &[c])
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (n, ca) = self.matrix_dims(a, "concat lhs")?;
        let (nb, cb) = self.matrix_dims(b, "concat rhs")?;
        if n != nb {
            return Err(shape_err(format!("concat_cols: {n} rows vs {nb} rows")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut y = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            y.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            y.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        self.push(Tensor::new(&[n, ca + cb], y)?, Op::ConcatCols { a, b }, &[a, b])
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (na, c) = self.matrix_dims(a, "concat lhs")?;
        let (nb, cb) = self.matrix_dims(b, "concat rhs")?;
        if c != cb {
            return Err(shape_err(format!("concat_rows: {c} cols vs {cb} cols")));
        }
        let mut y = self.value(a).data().to_vec();
        y.extend_from_slice(self.value(b).data());
        self.push(Tensor::new(&[na + nb, c], y)?, Op::ConcatRows { a, b }, &[a, b])
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId, DiffError> {
        let (n, c) = self.matrix_dims(a, "gather input")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(shape_err(format!("gather_rows: index {bad} out of {n} rows")));
        }
        let av = self.value(a).data();
        let mut y = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            y.extend_from_slice(&av[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(&[idx.len(), c], y)?;
        self.push(out, Op::GatherRows { a, idx }, &[a])
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, DiffError> {
        let (n, c) = self.matrix_dims(a, "slice input")?;
        if len == 0 || start + len > c {
            return Err(shape_err(format!("slice_cols: [{start}, {}) of {c}", start + len)));
        }
        let av = self.value(a).data();
        let mut y = Vec::with_capacity(n * len);
        for i in 0..n {
            y.extend_from_slice(&av[i * c + start..i * c + start + len]);
        }
        self.push(Tensor::new(&[n, len], y)?, Op::SliceCols { a, start }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, DiffError> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push(out, Op::Reshape { a }, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let s: f64 = self.value(a).data().iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(T::of(s)), Op::SumAll { a }, &[a])
    }

    /// L2 Chamfer distance between row sets `a: [n, d]` and `b: [m, d]`:
    /// mean squared nearest-neighbor distance per side, summed.
    pub fn chamfer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (n, d) = self.matrix_dims(a, "chamfer lhs")?;
        let (m, bd) = self.matrix_dims(b, "chamfer rhs")?;
        if d != bd {
            return Err(shape_err(format!("chamfer: width {d} vs {bd}")));
        }
        let av: Vec<f64> = self.value(a).data().iter().map(|v| v.f64()).collect();
        let bv: Vec<f64> = self.value(b).data().iter().map(|v| v.f64()).collect();
        let (sum_ab, nn_ab) = nearest(&av, &bv, d);
        let (sum_ba, nn_ba) = nearest(&bv, &av, d);
        let value = sum_ab / n as f64 + sum_ba / m as f64;
        self.record(nn_ab.iter().chain(&nn_ba).copied());
        self.push(
            Tensor::scalar(T::of(value)),
            Op::Chamfer { a, b, nn_ab, nn_ba },
            &[a, b],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, DiffError> {
        if self.value(loss).len() != 1 {
            return Err(DiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor<T>>], id: NodeId) -> &'g mut [T] {
        grads[id.0]
            .get_or_insert_with(|| Tensor::zeros(self.shape(id)))
            .data_mut()
    }

    fn backward_node(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let g = dy.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Linear { x, w, b } => {
                let (n, inp) = (self.shape(x)[0], self.shape(x)[1]);
                let out = self.shape(w)[1];
                if self.wants(x) {
                    let wv = self.value(w).data();
                    let dx = self.acc(grads, x);
                    for i in 0..n {
                        let gr = &g[i * out..(i + 1) * out];
                        for k in 0..inp {
                            dx[i * inp + k] += dot(gr, &wv[k * out..(k + 1) * out]);
                        }
                    }
                }
                if self.wants(w) {
                    let xv = self.value(x).data();
                    let dw = self.acc(grads, w);
                    for i in 0..n {
                        let gr = &g[i * out..(i + 1) * out];
                        for k in 0..inp {
                            let xik = xv[i * inp + k];
                            if xik == T::zero() {
                                continue;
                            }
                            axpy(xik, gr, &mut dw[k * out..(k + 1) * out]);
                        }
                    }
                }
                if self.wants(b) {
                    let db = self.acc(grads, b);
                    for gr in g.chunks_exact(out) {
                        axpy(T::one(), gr, db);
                    }
                }
            }
            &Op::MatMul { a, b } => {
                let (n, k) = (self.shape(a)[0], self.shape(a)[1]);
                let m = self.shape(b)[1];
                if self.wants(a) {
                    let bv = self.value(b).data();
                    let da = self.acc(grads, a);
                    for i in 0..n {
                        for kk in 0..k {
                            da[i * k + kk] += dot(&g[i * m..(i + 1) * m], &bv[kk * m..(kk + 1) * m]);
                        }
                    }
                }
                if self.wants(b) {
                    let av = self.value(a).data();
                    let db = self.acc(grads, b);
                    for i in 0..n {
                        for kk in 0..k {
                            axpy(av[i * k + kk], &g[i * m..(i + 1) * m], &mut db[kk * m..(kk + 1) * m]);
                        }
                    }
                }
            }
            &Op::MatMulNt { a, b } => {
                let (n, d) = (self.shape(a)[0], self.shape(a)[1]);
                let m = self.shape(b)[0];
                if self.wants(a) {
                    let bv = self.value(b).data();
                    let da = self.acc(grads, a);
                    for i in 0..n {
                        for j in 0..m {
                            axpy(g[i * m + j], &bv[j * d..(j + 1) * d], &mut da[i * d..(i + 1) * d]);
                        }
                    }
                }
                if self.wants(b) {
                    let av = self.value(a).data();
                    let db = self.acc(grads, b);
                    for i in 0..n {
                        for j in 0..m {
                            axpy(g[i * m + j], &av[i * d..(i + 1) * d], &mut db[j * d..(j + 1) * d]);
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                for id in [a, b] {
                    if self.wants(id) {
                        axpy(T::one(), g, self.acc(grads, id));
                    }
                }
            }
            &Op::Sub { a, b } => {
                if self.wants(a) {
                    axpy(T::one(), g, self.acc(grads, a));
                }
                if self.wants(b) {
                    axpy(-T::one(), g, self.acc(grads, b));
                }
            }
            &Op::Scale { a, s } => {
                if self.wants(a) {
                    axpy(s, g, self.acc(grads, a));
                }
            }
            &Op::Relu { a } => {
                if self.wants(a) {
                    let av = self.value(a).data();
                    let da = self.acc(grads, a);
                    for ((d, &x), &gi) in da.iter_mut().zip(av).zip(g) {
                        if x > T::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Softmax { a } => {
                if self.wants(a) {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let da = self.acc(grads, a);
                    for ((yr, gr), dr) in y.chunks_exact(c).zip(g.chunks_exact(c)).zip(da.chunks_exact_mut(c)) {
                        let s = dot(yr, gr);
                        for ((d, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                            *d += yi * (gi - s);
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let c = inv_std.len();
                let n = g.len() / c;
                if self.wants(beta) {
                    let db = self.acc(grads, beta);
                    for gr in g.chunks_exact(c) {
                        axpy(T::one(), gr, db);
                    }
                }
                if self.wants(gamma) {
                    let dgm = self.acc(grads, gamma);
                    for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            dgm[j] += gr[j] * hr[j];
                        }
                    }
                }
                if self.wants(x) {
                    let gv = self.value(gamma).data();
                    let dx = self.acc(grads, x);
                    if *train {
                        let mut sum_dh = vec![T::zero(); c];
                        let mut sum_dh_h = vec![T::zero(); c];
                        for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                            for j in 0..c {
                                let dh = gr[j] * gv[j];
                                sum_dh[j] += dh;
                                sum_dh_h[j] += dh * hr[j];
                            }
                        }
                        let nt = T::of(n as f64);
                        for ((dr, gr), hr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                            for j in 0..c {
                                let dh = gr[j] * gv[j];
                                dr[j] += inv_std[j] / nt * (nt * dh - sum_dh[j] - hr[j] * sum_dh_h[j]);
                            }
                        }
                    } else {
                        for (dr, gr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                            for j in 0..c {
                                dr[j] += gr[j] * gv[j] * inv_std[j];
                            }
                        }
                    }
                }
            }
            Op::MaxGroups { a, argmax } => {
                let a = *a;
                if self.wants(a) {
                    let c = node.value.cols();
                    let da = self.acc(grads, a);
                    for (o, &r) in argmax.iter().enumerate() {
                        da[r * c + o % c] += g[o];
                    }
                }
            }
            &Op::ConcatCols { a, b } => {
                let ca = self.shape(a)[1];
                let cb = self.shape(b)[1];
                let w = ca + cb;
                if self.wants(a) {
                    let da = self.acc(grads, a);
                    for (dr, gr) in da.chunks_exact_mut(ca).zip(g.chunks_exact(w)) {
                        axpy(T::one(), &gr[..ca], dr);
                    }
                }
                if self.wants(b) {
                    let db = self.acc(grads, b);
                    for (dr, gr) in db.chunks_exact_mut(cb).zip(g.chunks_exact(w)) {
                        axpy(T::one(), &gr[ca..], dr);
                    }
                }
            }
            &Op::ConcatRows { a, b } => {
                let split = self.value(a).len();
                if self.wants(a) {
                    axpy(T::one(), &g[..split], self.acc(grads, a));
                }
                if self.wants(b) {
                    axpy(T::one(), &g[split..], self.acc(grads, b));
                }
            }
            Op::GatherRows { a, idx } => {
                let a = *a;
                if self.wants(a) {
                    let c = node.value.cols();
                    let da = self.acc(grads, a);
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(T::one(), &g[r * c..(r + 1) * c], &mut da[i * c..(i + 1) * c]);
                    }
                }
            }
            &Op::SliceCols { a, start } => {
                if self.wants(a) {
                    let c = self.shape(a)[1];
                    let len = node.value.cols();
                    let da = self.acc(grads, a);
                    for (dr, gr) in da.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
                        axpy(T::one(), gr, &mut dr[start..start + len]);
                    }
                }
            }
            &Op::Reshape { a } => {
                if self.wants(a) {
                    axpy(T::one(), g, self.acc(grads, a));
                }
            }
            &Op::SumAll { a } => {
                if self.wants(a) {
                    let s = g[0];
                    self.acc(grads, a).iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Chamfer { a, b, nn_ab, nn_ba } => {
                let (a, b) = (*a, *b);
                let d = self.shape(a)[1];
                let (n, m) = (nn_ab.len(), nn_ba.len());
                let s = g[0];
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let two = T::of(2.0);
                let wa = s * two / T::of(n as f64);
                let wb = s * two / T::of(m as f64);
                // d/dp |p - q|^2 = 2 (p - q), applied along both directions.
                if self.wants(a) {
                    let da = self.acc(grads, a);
                    for (i, &j) in nn_ab.iter().enumerate() {
                        for k in 0..d {
                            da[i * d + k] += wa * (av[i * d + k] - bv[j * d + k]);
                        }
                    }
                    for (j, &i) in nn_ba.iter().enumerate() {
                        for k in 0..d {
                            da[i * d + k] += wb * (av[i * d + k] - bv[j * d + k]);
                        }
                    }
                }
                if self.wants(b) {
                    let db = self.acc(grads, b);
                    for (i, &j) in nn_ab.iter().enumerate() {
                        for k in 0..d {
                            db[j * d + k] += wa * (bv[j * d + k] - av[i * d + k]);
                        }
                    }
                    for (j, &i) in nn_ba.iter().enumerate() {
                        for k in 0..d {
                            db[j * d + k] += wb * (bv[j * d + k] - av[i * d + k]);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn matmul_acc<T: Scalar>(a: &[T], b: &[T], y: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let yr = &mut y[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            axpy(aik, &b[kk * m..(kk + 1) * m], yr);
        }
    }
}

/// Sum of squared nearest-neighbor distances from each row of `from` to
/// the rows of `to`, with the winning index per row (lowest on ties).
fn nearest(from: &[f64], to: &[f64], d: usize) -> (f64, Vec<usize>) {
    let mut total = 0f64;
    let mut idx = Vec::with_capacity(from.len() / d);
    for p in from.chunks_exact(d) {
        let mut best = f64::INFINITY;
        let mut bi = 0;
        for (j, q) in to.chunks_exact(d).enumerate() {
            let mut s = 0f64;
            for k in 0..d {
                let t = p[k] - q[k];
                s += t * t;
            }
            if s < best {
                best = s;
                bi = j;
            }
        }
        total += best;
        idx.push(bi);
    }
    (total, idx)
}
