//! Dense 2-D tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Trainable values live in a [`ParamStore`] and enter a graph through
//! [`Graph::param`]; [`Graph::backward`] then accumulates `∂loss/∂param` into
//! the store. All reductions run sequentially in a fixed order, so a given
//! sequence of operations always produces bit-identical results.

mod adam;
pub mod checkpoint;

pub use adam::Adam;

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major `rows × cols` array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match shape [{rows}, {cols}]",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(1, 1, value)
    }

    pub fn column(values: Vec<f64>) -> Self {
        let rows = values.len();
        Self { rows, cols: 1, data: values }
    }

    pub fn from_points(points: &[[f64; 3]]) -> Self {
        Self {
            rows: points.len(),
            cols: 3,
            data: points.iter().flatten().copied().collect(),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `C = A·B` with `A: n×k`, `B: k×m`.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Sets every gradient to zeros of the parameter's shape.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = Some(Tensor::zeros(p.value.rows, p.value.cols));
        }
    }

    pub fn clear_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces values from `(name, tensor)` pairs; names and shapes must match exactly.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters, model expects {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, (name, t)) in self.params.iter().zip(&values) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "checkpoint parameter {name} {:?} does not match model parameter {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        for (p, (_, t)) in self.params.iter_mut().zip(values) {
            p.value = t;
        }
        Ok(())
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    MaxOverRows(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    BroadcastRows(Var),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Tensor),
    CrossEntropy(Var, Vec<usize>, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if cfg!(debug_assertions) && value.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("output of {}", op_name(&op))));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(mismatch("matmul", ta, tb));
        }
        let (n, k, m) = (ta.rows, ta.cols, tb.cols);
        let mut out = Tensor::zeros(n, m);
        matmul_into(&ta.data, &tb.data, &mut out.data, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor { data, ..*ta };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Adds the `1×C` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows != 1 || tb.cols != ta.cols {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut out = ta.clone();
        for row in out.data.chunks_mut(ta.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&tb.data) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(out, Op::AddRow(a, bias), rg)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let out = Tensor { data, ..*ta };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ta = self.value(a);
        let out = Tensor {
            data: ta.data.iter().map(|x| x * s).collect(),
            ..*ta
        };
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let out = Tensor {
            data: ta.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
            ..*ta
        };
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let out = Tensor {
            data: ta.data.iter().map(|&x| sigmoid(x)).collect(),
            ..*ta
        };
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Softmax across the columns of each row.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.cols == 0 {
            return Err(Error::invalid("row_softmax over zero columns"));
        }
        let mut out = ta.clone();
        for row in out.data.chunks_mut(ta.cols) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(out, Op::RowSoftmax(a), rg)
    }

    /// Column-wise maximum over all rows (global max-pool), `N×C → 1×C`.
    /// Ties resolve to the lowest row.
    pub fn max_over_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows == 0 {
            return Err(Error::invalid("max_over_rows of an empty tensor"));
        }
        let mut arg = vec![0usize; ta.cols];
        let mut best = ta.row(0).to_vec();
        for r in 1..ta.rows {
            for (c, &v) in ta.row(r).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    arg[c] = r;
                }
            }
        }
        let out = Tensor {
            rows: 1,
            cols: ta.cols,
            data: best,
        };
        let rg = self.rg(a);
        self.push(out, Op::MaxOverRows(a, arg), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= ta.rows) {
            return Err(Error::invalid(format!("gather_rows index {bad} out of range for {} rows", ta.rows)));
        }
        let mut data = Vec::with_capacity(idx.len() * ta.cols);
        for &i in idx {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor {
            rows: idx.len(),
            cols: ta.cols,
            data,
        };
        let rg = self.rg(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat_cols of nothing"));
        };
        let rows = self.value(first).rows;
        for &p in parts {
            if self.value(p).rows != rows {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor { rows, cols, data }, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Repeats a `1×C` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_rows",
                left: ta.shape().to_vec(),
                right: vec![1, ta.cols],
            });
        }
        let data = ta.data.repeat(n);
        let out = Tensor { rows: n, cols: ta.cols, data };
        let rg = self.rg(a);
        self.push(out, Op::BroadcastRows(a), rg)
    }

    /// Row sums, `N×C → N×1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data.chunks(ta.cols.max(1)).map(|r| r.iter().sum()).collect();
        let out = Tensor { rows: ta.rows, cols: 1, data };
        let rg = self.rg(a);
        self.push(out, Op::SumCols(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let s = ta.data.iter().sum::<f64>() / ta.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: &Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != target.shape() {
            return Err(mismatch("mse", ta, target));
        }
        if ta.is_empty() {
            return Err(Error::invalid("mse of an empty tensor"));
        }
        let s = ta.data.iter().zip(&target.data).map(|(x, t)| (x - t) * (x - t)).sum::<f64>() / ta.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mse(a, target.clone()), rg)
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if labels.len() != tl.rows {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: tl.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if tl.rows == 0 {
            return Err(Error::invalid("cross_entropy over zero rows"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= tl.cols) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", tl.cols)));
        }
        let mut probs = tl.clone();
        let mut total = 0.0;
        for (r, row) in probs.data.chunks_mut(tl.cols).enumerate() {
            let lse = log_sum_exp(row);
            total += lse - row[labels[r]];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let loss = total / tl.rows as f64;
        let rg = self.rg(logits);
        self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, labels.to_vec(), probs), rg)
    }

    /// Accumulates `∂loss/∂param` into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_scaled(loss, 1.0, store)
    }

    /// Like [`Graph::backward`] with the seed gradient set to `scale`; used to
    /// average over samples that are processed in separate graphs.
    pub fn backward_scaled(&self, loss: Var, scale: f64, store: &mut ParamStore) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::invalid(format!("backward needs a scalar loss, got shape {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(scale));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    match &mut p.grad {
                        Some(acc) => acc.add_assign(&g),
                        None => p.grad = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (ta.rows, ta.cols, tb.cols);
                    if self.rg(*a) {
                        // dA = G·Bᵀ
                        let mut ga = Tensor::zeros(n, k);
                        for r in 0..n {
                            let g_row = &g.data[r * m..(r + 1) * m];
                            for p in 0..k {
                                let b_row = &tb.data[p * m..(p + 1) * m];
                                ga.data[r * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        // dB = Aᵀ·G
                        let mut gb = Tensor::zeros(k, m);
                        for r in 0..n {
                            let g_row = &g.data[r * m..(r + 1) * m];
                            for p in 0..k {
                                let a_rp = ta.data[r * k + p];
                                if a_rp == 0.0 {
                                    continue;
                                }
                                for (o, &gv) in gb.data[p * m..(p + 1) * m].iter_mut().zip(g_row) {
                                    *o += a_rp * gv;
                                }
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.rg(*bias) {
                        let mut gb = Tensor::zeros(1, g.cols);
                        for row in g.data.chunks(g.cols.max(1)) {
                            for (o, v) in gb.data.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let data = g.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *a, Tensor { data, ..g });
                    }
                    if self.rg(*b) {
                        let data = g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *b, Tensor { data, ..g });
                    }
                }
                Op::Scale(a, s) => {
                    let data = g.data.iter().map(|x| x * s).collect();
                    accumulate(&mut grads, *a, Tensor { data, ..g });
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let data = g.data.iter().zip(&ta.data).map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, Tensor { data, ..g });
                }
                Op::Sigmoid(a) => {
                    let data = g.data.iter().zip(&out.data).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                    accumulate(&mut grads, *a, Tensor { data, ..g });
                }
                Op::RowSoftmax(a) => {
                    let mut ga = g.clone();
                    for (grow, yrow) in ga.data.chunks_mut(out.cols).zip(out.data.chunks(out.cols)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for (gv, y) in grow.iter_mut().zip(yrow) {
                            *gv = y * (*gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MaxOverRows(a, arg) => {
                    let ta = self.value(*a);
                    let mut ga = Tensor::zeros(ta.rows, ta.cols);
                    for (c, &r) in arg.iter().enumerate() {
                        ga.data[r * ta.cols + c] += g.data[c];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let ta = self.value(*a);
                    let mut ga = Tensor::zeros(ta.rows, ta.cols);
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..ta.cols {
                            ga.data[src * ta.cols + c] += g.data[r * ta.cols + c];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        if self.rg(p) {
                            let mut gp = Tensor::zeros(g.rows, cols);
                            for r in 0..g.rows {
                                gp.data[r * cols..(r + 1) * cols]
                                    .copy_from_slice(&g.data[r * g.cols + offset..r * g.cols + offset + cols]);
                            }
                            accumulate(&mut grads, p, gp);
                        }
                        offset += cols;
                    }
                }
                Op::BroadcastRows(a) => {
                    let mut ga = Tensor::zeros(1, g.cols);
                    for row in g.data.chunks(g.cols.max(1)) {
                        for (o, v) in ga.data.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let ta = self.value(*a);
                    let mut ga = Tensor::zeros(ta.rows, ta.cols);
                    for (r, row) in ga.data.chunks_mut(ta.cols.max(1)).enumerate() {
                        row.fill(g.data[r]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ta = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::full(ta.rows, ta.cols, g.data[0]));
                }
                Op::Mean(a) => {
                    let ta = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::full(ta.rows, ta.cols, g.data[0] / ta.len() as f64));
                }
                Op::Mse(a, target) => {
                    let ta = self.value(*a);
                    let f = 2.0 * g.data[0] / ta.len() as f64;
                    let data = ta.data.iter().zip(&target.data).map(|(x, t)| f * (x - t)).collect();
                    accumulate(&mut grads, *a, Tensor { data, ..*ta });
                }
                Op::CrossEntropy(a, labels, probs) => {
                    let f = g.data[0] / probs.rows as f64;
                    let mut ga = probs.clone();
                    for (r, row) in ga.data.chunks_mut(probs.cols).enumerate() {
                        row[labels[r]] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= f;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::RowSoftmax(_) => "row_softmax",
        Op::MaxOverRows(..) => "max_over_rows",
        Op::GatherRows(..) => "gather_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::BroadcastRows(_) => "broadcast_rows",
        Op::SumCols(_) => "sum_cols",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Mse(..) => "mse",
        Op::CrossEntropy(..) => "cross_entropy",
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
