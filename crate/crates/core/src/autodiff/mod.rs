//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is an append-only tape. Every operation appends a node holding
//! its forward value; [`Graph::backward`] walks the tape in reverse append order
//! and accumulates gradients. Only the handful of operations the networks and
//! likelihoods need are provided.

mod check;

pub use check::grad_check;

use crate::error::{Error, Result};
use crate::special::{digamma, lgamma};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) && !values.is_empty() {
            return Err(Error::config(format!("shape {shape:?} has a zero extent")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::config(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(rows, cols)` treating a 1-D tensor as a single row.
    fn as_rows(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                let cols = *self.shape.last().unwrap_or(&1);
                (self.values.len() / cols.max(1), cols)
            }
        }
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// Right operand equal shape, a scalar, or a row vector broadcast over rows.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    LogSoftmax(NodeId),
    Lgamma(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Picks column `indices[i]` from row `i`.
    IndexSelectRow(NodeId, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "mul-scalar",
            Op::AddScalar(..) => "add-scalar",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Lgamma(_) => "lgamma",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::IndexSelectRow(..) => "index-select-row",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// An input that never receives a gradient (data, labels).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// The single value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.values[0]
    }

    /// Gradient of the last backward root w.r.t. `id`; zeros when unreachable.
    pub fn grad(&self, id: NodeId) -> Vec<f64> {
        let node = &self.nodes[id.0];
        node.grad
            .clone()
            .unwrap_or_else(|| vec![0.0; node.value.len()])
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn unary(&mut self, op: Op, a: NodeId, value: Tensor) -> NodeId {
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.nodes[a.0].value;
        Tensor {
            shape: t.shape.clone(),
            values: t.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn broadcast_kind(&self, a: NodeId, b: NodeId, op: &str) -> Result<Broadcast> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        if ta.shape == tb.shape {
            return Ok(Broadcast::Same);
        }
        if tb.len() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if ta.shape.len() == 2 && tb.shape.len() == 1 && tb.shape[0] == ta.shape[1] {
            return Ok(Broadcast::Row);
        }
        Err(Error::config(format!(
            "{op}: shapes {:?} and {:?} do not conform",
            ta.shape, tb.shape
        )))
    }

    fn zip(&self, a: NodeId, b: NodeId, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let values = match kind {
            Broadcast::Same => ta
                .values
                .iter()
                .zip(&tb.values)
                .map(|(&x, &y)| f(x, y))
                .collect(),
            Broadcast::Scalar => {
                let y = tb.values[0];
                ta.values.iter().map(|&x| f(x, y)).collect()
            }
            Broadcast::Row => {
                let cols = tb.values.len();
                ta.values
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, tb.values[i % cols]))
                    .collect()
            }
        };
        Tensor {
            shape: ta.shape.clone(),
            values,
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = match ta.shape.as_slice() {
            [m, k] => (*m, *k),
            s => {
                return Err(Error::config(format!(
                    "matmul: left operand must be 2-D, got {s:?}"
                )))
            }
        };
        let (k2, n) = match tb.shape.as_slice() {
            [k2, n] => (*k2, *n),
            s => {
                return Err(Error::config(format!(
                    "matmul: right operand must be 2-D, got {s:?}"
                )))
            }
        };
        if k != k2 {
            return Err(Error::config(format!(
                "matmul: inner dimensions {k} and {k2} differ"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&ta.values, &tb.values, m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::MatMul(a, b),
            Tensor {
                shape: vec![m, n],
                values: out,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let t = &self.nodes[a.0].value;
        let (r, c) = match t.shape.as_slice() {
            [r, c] => (*r, *c),
            s => {
                return Err(Error::config(format!(
                    "transpose: operand must be 2-D, got {s:?}"
                )))
            }
        };
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.values[i * c + j];
            }
        }
        Ok(self.unary(
            Op::Transpose(a),
            a,
            Tensor {
                shape: vec![c, r],
                values: out,
            },
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let kind = self.broadcast_kind(a, b, "add")?;
        let v = self.zip(a, b, kind, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let kind = self.broadcast_kind(a, b, "sub")?;
        let v = self.zip(a, b, kind, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    /// Elementwise product of equal-shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let kind = self.broadcast_kind(a, b, "mul")?;
        if kind != Broadcast::Same {
            return Err(Error::config("mul: operands must have equal shape"));
        }
        let v = self.zip(a, b, kind, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.map(a, |x| x * s);
        self.unary(Op::Scale(a, s), a, v)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.map(a, |x| x + s);
        self.unary(Op::AddScalar(a), a, v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.unary(Op::Relu(a), a, v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, f64::tanh);
        self.unary(Op::Tanh(a), a, v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, f64::exp);
        self.unary(Op::Exp(a), a, v)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.nodes[a.0].value.values.iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::domain(format!("log of non-positive value {bad}")));
        }
        let v = self.map(a, f64::ln);
        Ok(self.unary(Op::Log(a), a, v))
    }

    /// Row-wise log-softmax (a 1-D operand is one row), max-shifted.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let (rows, cols) = t.as_rows();
        let mut out = t.values.clone();
        for r in 0..rows {
            log_softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        let v = Tensor {
            shape: t.shape.clone(),
            values: out,
        };
        self.unary(Op::LogSoftmax(a), a, v)
    }

    /// Elementwise `ln Γ`; operands must be positive.
    pub fn lgamma(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.nodes[a.0].value.values.iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::domain(format!("lgamma of non-positive value {bad}")));
        }
        let v = self.map(a, lgamma);
        Ok(self.unary(Op::Lgamma(a), a, v))
    }

    /// Sum of all entries, accumulated left to right.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0]
            .value
            .values
            .iter()
            .fold(0.0, |acc, &x| acc + x);
        self.unary(Op::Sum(a), a, Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let s = t.values.iter().fold(0.0, |acc, &x| acc + x) / t.len() as f64;
        self.unary(Op::Mean(a), a, Tensor::scalar(s))
    }

    /// For a `rows × cols` operand returns the length-`rows` vector `a[i, indices[i]]`.
    pub fn index_select_row(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = &self.nodes[a.0].value;
        let (rows, cols) = t.as_rows();
        if indices.len() != rows {
            return Err(Error::config(format!(
                "index-select-row: {} indices for {rows} rows",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&k| k >= cols) {
            return Err(Error::config(format!(
                "index-select-row: column {bad} out of {cols}"
            )));
        }
        let v: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(i, &k)| t.values[i * cols + k])
            .collect();
        let out = Tensor::vector(v);
        Ok(self.unary(Op::IndexSelectRow(a, indices.to_vec()), a, out))
    }

    /// Populates gradients of the scalar `root` w.r.t. every node that reaches it.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::usage(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &upstream);
            }
            self.nodes[idx].grad = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contribution: Vec<f64>) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
            None => node.grad = Some(contribution),
        }
    }

    fn accumulate_with(&mut self, id: NodeId, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let n = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    fn propagate(&mut self, idx: usize, up: &[f64]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.as_rows();
                let n = self.nodes[b.0].value.shape[1];
                if self.rg(a) {
                    let bv = &self.nodes[b.0].value.values;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let up_row = &up[i * n..(i + 1) * n];
                        for p in 0..k {
                            let b_row = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = dot(up_row, b_row);
                        }
                    }
                    self.accumulate(a, da);
                }
                if self.rg(b) {
                    let av = self.nodes[a.0].value.values.clone();
                    self.accumulate_with(b, |db| {
                        for i in 0..m {
                            let up_row = &up[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av[i * k + p];
                                if x != 0.0 {
                                    axpy(x, up_row, &mut db[p * n..(p + 1) * n]);
                                }
                            }
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let out_shape = &self.nodes[idx].value.shape;
                let (r, c) = (out_shape[0], out_shape[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] = up[i * c + j];
                    }
                }
                self.accumulate(a, da);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.accumulate(a, up.to_vec());
                if self.rg(b) {
                    let kind = self
                        .broadcast_kind(a, b, "add")
                        .expect("checked at forward");
                    let db = match kind {
                        Broadcast::Same => up.iter().map(|g| sign * g).collect(),
                        Broadcast::Scalar => vec![sign * up.iter().sum::<f64>()],
                        Broadcast::Row => {
                            let cols = self.nodes[b.0].value.len();
                            let mut db = vec![0.0; cols];
                            for (i, g) in up.iter().enumerate() {
                                db[i % cols] += sign * g;
                            }
                            db
                        }
                    };
                    self.accumulate(b, db);
                }
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = up
                    .iter()
                    .zip(&self.nodes[b.0].value.values)
                    .map(|(g, y)| g * y)
                    .collect();
                let db: Vec<f64> = up
                    .iter()
                    .zip(&self.nodes[a.0].value.values)
                    .map(|(g, x)| g * x)
                    .collect();
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Scale(a, s) => self.accumulate(a, up.iter().map(|g| g * s).collect()),
            Op::AddScalar(a) => self.accumulate(a, up.to_vec()),
            Op::Relu(a) => {
                let da = up
                    .iter()
                    .zip(&self.nodes[a.0].value.values)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(a, da);
            }
            Op::Tanh(a) => {
                let da = up
                    .iter()
                    .zip(&self.nodes[idx].value.values)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(a, da);
            }
            Op::Exp(a) => {
                let da = up
                    .iter()
                    .zip(&self.nodes[idx].value.values)
                    .map(|(g, y)| g * y)
                    .collect();
                self.accumulate(a, da);
            }
            Op::Log(a) => {
                let da = up
                    .iter()
                    .zip(&self.nodes[a.0].value.values)
                    .map(|(g, x)| g / x)
                    .collect();
                self.accumulate(a, da);
            }
            Op::LogSoftmax(a) => {
                let out = &self.nodes[idx].value;
                let (rows, cols) = out.as_rows();
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let total: f64 = up[span.clone()].iter().sum();
                    for j in span {
                        da[j] = up[j] - out.values[j].exp() * total;
                    }
                }
                self.accumulate(a, da);
            }
            Op::Lgamma(a) => {
                let da = up
                    .iter()
                    .zip(&self.nodes[a.0].value.values)
                    .map(|(g, &x)| g * digamma(x))
                    .collect();
                self.accumulate(a, da);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                self.accumulate(a, vec![up[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                self.accumulate(a, vec![up[0] / n as f64; n]);
            }
            Op::IndexSelectRow(a, indices) => {
                let (_, cols) = self.nodes[a.0].value.as_rows();
                self.accumulate_with(a, |da| {
                    for (i, &k) in indices.iter().enumerate() {
                        da[i * cols + k] += up[i];
                    }
                });
            }
        }
    }

    /// Name of the operation that produced `id`.
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }
}

/// Row-major `out = a · b` for `a: m×k`, `b: k×n`. Zero entries of `a` are skipped.
pub fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x != 0.0 {
                axpy(x, &b[p * n..(p + 1) * n], out_row);
            }
        }
    }
}

/// Max-shifted log-softmax of one row.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // subtract the shift before the log-sum so huge logits keep full precision
    let log_sum = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|z| *z = (*z - max) - log_sum);
}

/// Softmax of one row as `exp(log_softmax)`.
pub fn softmax_in_place(row: &mut [f64]) {
    log_softmax_in_place(row);
    row.iter_mut().for_each(|z| *z = z.exp());
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
