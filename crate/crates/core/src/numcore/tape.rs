//! Reverse-mode differentiation record.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append a node and return a [`Var`] handle; [`Tape::backward`] replays the
//! recorded rules in reverse order. Nodes are appended only after their
//! inputs exist, so insertion order is a topological order.
//!
//! Subgradients at kinks (`relu`, `abs`, `max_with_zero`) are fixed to 0.

use super::kernels::{gemm, matmul, Layout};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        broadcast: Broadcast,
    },
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Abs(Var),
    SumAll(Var),
    SumRows(Var),
    MeanGroups(Var, usize),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    Reshape(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Intervene {
        z: Var,
        draws: usize,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

impl Node {
    fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[0]
        }
    }

    fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts_unchecked(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn is_reachable(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (a parameter or an input that needs gradients).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    fn push_leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: t.into_data(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_parts_unchecked(n.shape.clone(), n.value.clone())
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = &self.nodes[v.0];
        if n.value.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar, node has shape {:?}",
                n.shape
            )));
        }
        Ok(n.value[0])
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddConst(x)
            | Op::Relu(x)
            | Op::Abs(x)
            | Op::SumAll(x)
            | Op::SumRows(x)
            | Op::MeanGroups(x, _)
            | Op::GatherRows(x, _)
            | Op::GatherCols(x, _)
            | Op::Reshape(x) => vec![*x],
            Op::SoftmaxCe { logits, .. } => vec![*logits],
            Op::Intervene { z, .. } => vec![*z],
        }
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let n = &self.nodes[v.0];
        if n.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "{what}: expected a matrix, got shape {:?}",
                n.shape
            )));
        }
        Ok((n.shape[0], n.shape[1]))
    }

    /// Matrix product `a · b` with `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Matrix product `a · bᵀ` with `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (br, bc) = self.matrix_dims(b, "matmul rhs")?;
        let (kb, n) = if transpose_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {m}×{k} by {}",
                if transpose_b {
                    format!("({br}×{bc})ᵀ")
                } else {
                    format!("{br}×{bc}")
                }
            )));
        }
        let out = matmul(self.value(a), m, k, self.value(b), n, transpose_b);
        self.push(
            "matmul",
            vec![m, n],
            out,
            Op::MatMul {
                a,
                b,
                transpose_b,
            },
        )
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        let broadcast = if self.nodes[a.0].shape == self.nodes[b.0].shape {
            Broadcast::Same
        } else if lb == 1 {
            Broadcast::RightScalar
        } else if la == 1 {
            Broadcast::LeftScalar
        } else {
            return Err(Error::Dimension(format!(
                "elementwise {:?}: shapes {:?} and {:?} are not compatible",
                kind, self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        };
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let (va, vb) = (self.value(a), self.value(b));
        let (shape, out): (Vec<usize>, Vec<f64>) = match broadcast {
            Broadcast::Same => (
                self.nodes[a.0].shape.clone(),
                va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::RightScalar => (
                self.nodes[a.0].shape.clone(),
                va.iter().map(|&x| f(x, vb[0])).collect(),
            ),
            Broadcast::LeftScalar => (
                self.nodes[b.0].shape.clone(),
                vb.iter().map(|&y| f(va[0], y)).collect(),
            ),
        };
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        self.push(
            name,
            shape,
            out,
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
        )
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

    /// Multiplication by a constant factor.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, out, Op::Scale(x, factor))
    }

    /// Addition of a constant offset.
    pub fn add_const(&mut self, x: Var, offset: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v + offset).collect();
        let shape = self.shape(x).to_vec();
        self.push("add_const", shape, out, Op::AddConst(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push("relu", shape, out, Op::Relu(x))
    }

    /// Hinge `max(x, 0)`; identical rule to [`Tape::relu`].
    pub fn max_with_zero(&mut self, x: Var) -> Result<Var> {
        self.relu(x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v.abs()).collect();
        let shape = self.shape(x).to_vec();
        self.push("abs", shape, out, Op::Abs(x))
    }

    /// Sum of all elements, accumulated in storage order.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push("sum", vec![1], vec![s], Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row sums of a matrix: `r×c → [r]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "sum_rows")?;
        let v = self.value(x);
        let out = (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect();
        self.push("sum_rows", vec![r], out, Op::SumRows(x))
    }

    /// Means over consecutive groups of `group` elements: `[g·k] → [k]`.
    pub fn mean_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let len = self.value(x).len();
        if group == 0 || !len.is_multiple_of(group) {
            return Err(Error::Dimension(format!(
                "mean_groups: {len} elements do not split into groups of {group}"
            )));
        }
        let inv = 1.0 / group as f64;
        let out = self
            .value(x)
            .chunks(group)
            .map(|c| c.iter().sum::<f64>() * inv)
            .collect();
        self.push("mean_groups", vec![len / group], out, Op::MeanGroups(x, group))
    }

    /// Selects rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("row {bad} of a {r}-row matrix")));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        self.push(
            "gather_rows",
            vec![idx.len(), c],
            out,
            Op::GatherRows(x, idx.to_vec()),
        )
    }

    /// Picks one column per row: `r×c, idx[r] → [r]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "gather_cols")?;
        if idx.len() != r {
            return Err(Error::Dimension(format!(
                "gather_cols: {} indices for {r} rows",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::Index(format!("column {bad} of a {c}-column matrix")));
        }
        let v = self.value(x);
        let out = idx.iter().enumerate().map(|(i, &j)| v[i * c + j]).collect();
        self.push("gather_cols", vec![r], out, Op::GatherCols(x, idx.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if shape.iter().product::<usize>() != len {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(x),
                shape
            )));
        }
        let out = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape(x))
    }

    /// Mean softmax cross-entropy of `logits: b×C` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.matrix_dims(logits, "softmax_cross_entropy")?;
        if labels.len() != b {
            return Err(Error::Dimension(format!(
                "{} labels for {b} rows of logits",
                labels.len()
            )));
        }
        if b == 0 {
            return Err(Error::Contract("cross-entropy of an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Index(format!("label {bad} with {c} classes")));
        }
        let v = self.value(logits);
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &v[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &x) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= z;
            }
            total += z.ln() + max - row[y];
        }
        let loss = total / b as f64;
        self.push(
            "softmax_cross_entropy",
            vec![1],
            vec![loss],
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Builds do-intervention rows for a batch of latent vectors.
    ///
    /// With `z: b×n` and constant `draws: K×n`, the output is `(b·n·K)×n`
    /// where row `(i, j, k)` equals draw `k` with coordinate `j` replaced by
    /// `z[i, j]`. Gradients flow into `z` only.
    pub fn intervene(&mut self, z: Var, draws: &Tensor) -> Result<Var> {
        let (b, n) = self.matrix_dims(z, "intervene")?;
        if draws.shape().len() != 2 || draws.cols() != n {
            return Err(Error::Dimension(format!(
                "intervention draws {:?} do not match latent width {n}",
                draws.shape()
            )));
        }
        let k = draws.rows();
        let zv = self.value(z);
        let dv = draws.data();
        let mut out = Vec::with_capacity(b * n * k * n);
        for i in 0..b {
            for j in 0..n {
                let alpha = zv[i * n + j];
                for d in 0..k {
                    let start = out.len();
                    out.extend_from_slice(&dv[d * n..(d + 1) * n]);
                    out[start + j] = alpha;
                }
            }
        }
        self.push(
            "intervene",
            vec![b * n * k, n],
            out,
            Op::Intervene { z, draws: k },
        )
    }

    /// Back-propagates from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }

        // Only nodes that require gradients carry meaningful values.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, transpose_b } => {
                let (m, k) = (self.nodes[a.0].rows(), self.nodes[a.0].cols());
                let n = node.cols();
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let lg = Layout::row_major(m, n);
                if self.wants(a) {
                    // dA = G · Bᵀ  (or G · B when b was used transposed)
                    let lb = if transpose_b {
                        Layout::row_major(n, k)
                    } else {
                        Layout::transposed(k, n)
                    };
                    let ga = acc(grads, a, m * k);
                    gemm(g, lg, bv, lb, 1.0, ga);
                }
                if self.wants(b) {
                    let gb = acc(grads, b, k * n);
                    if transpose_b {
                        // B is n×k: dB = Gᵀ · A
                        gemm(g, Layout::transposed(m, n), av, Layout::row_major(m, k), 1.0, gb);
                    } else {
                        // dB = Aᵀ · G
                        gemm(av, Layout::transposed(m, k), g, lg, 1.0, gb);
                    }
                }
            }
            &Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let la = av.len();
                let lb = bv.len();
                // element i of the output reads a[ia(i)] and b[ib(i)]
                let ia = |i: usize| if broadcast == Broadcast::LeftScalar { 0 } else { i };
                let ib = |i: usize| if broadcast == Broadcast::RightScalar { 0 } else { i };
                if self.wants(a) {
                    let ga = acc(grads, a, la);
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => gi,
                            BinaryKind::Mul => gi * bv[ib(i)],
                        };
                        ga[ia(i)] += d;
                    }
                }
                if self.wants(b) {
                    let gb = acc(grads, b, lb);
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add => gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * av[ia(i)],
                        };
                        gb[ib(i)] += d;
                    }
                }
            }
            &Op::Scale(x, factor) => {
                if self.wants(x) {
                    let gx = acc(grads, x, g.len());
                    for (d, &gi) in gx.iter_mut().zip(g) {
                        *d += gi * factor;
                    }
                }
            }
            &Op::AddConst(x) | &Op::Reshape(x) => {
                if self.wants(x) {
                    let gx = acc(grads, x, g.len());
                    for (d, &gi) in gx.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            &Op::Relu(x) => {
                if self.wants(x) {
                    let xv = &self.nodes[x.0].value;
                    let gx = acc(grads, x, g.len());
                    for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Abs(x) => {
                if self.wants(x) {
                    let xv = &self.nodes[x.0].value;
                    let gx = acc(grads, x, g.len());
                    for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *d += gi;
                        } else if xi < 0.0 {
                            *d -= gi;
                        }
                    }
                }
            }
            &Op::SumAll(x) => {
                if self.wants(x) {
                    let len = self.nodes[x.0].value.len();
                    let gx = acc(grads, x, len);
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            &Op::SumRows(x) => {
                if self.wants(x) {
                    let c = self.nodes[x.0].cols();
                    let len = self.nodes[x.0].value.len();
                    let gx = acc(grads, x, len);
                    for (row, &gi) in gx.chunks_mut(c).zip(g) {
                        for d in row {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::MeanGroups(x, group) => {
                if self.wants(x) {
                    let len = self.nodes[x.0].value.len();
                    let inv = 1.0 / group as f64;
                    let gx = acc(grads, x, len);
                    for (chunk, &gi) in gx.chunks_mut(group).zip(g) {
                        for d in chunk {
                            *d += gi * inv;
                        }
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                let x = *x;
                if self.wants(x) {
                    let c = self.nodes[x.0].cols();
                    let len = self.nodes[x.0].value.len();
                    let gx = acc(grads, x, len);
                    for (o, &i) in idx.iter().enumerate() {
                        for (d, &gi) in gx[i * c..(i + 1) * c].iter_mut().zip(&g[o * c..(o + 1) * c]) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::GatherCols(x, idx) => {
                let x = *x;
                if self.wants(x) {
                    let c = self.nodes[x.0].cols();
                    let len = self.nodes[x.0].value.len();
                    let gx = acc(grads, x, len);
                    for (i, (&j, &gi)) in idx.iter().zip(g).enumerate() {
                        gx[i * c + j] += gi;
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let x = *logits;
                if self.wants(x) {
                    let c = self.nodes[x.0].cols();
                    let b = labels.len();
                    let scale = g[0] / b as f64;
                    let gx = acc(grads, x, b * c);
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gx[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            &Op::Intervene { z, draws } => {
                if self.wants(z) {
                    let n = self.nodes[z.0].cols();
                    let len = self.nodes[z.0].value.len();
                    let gz = acc(grads, z, len);
                    // row (i, j, k) starts at ((i*n + j)*draws + k)*n
                    for (cell, d) in gz.iter_mut().enumerate() {
                        let j = cell % n;
                        let base = cell * draws;
                        for k in 0..draws {
                            *d += g[(base + k) * n + j];
                        }
                    }
                }
            }
        }
    }
}
