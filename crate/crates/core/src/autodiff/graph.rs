//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation is evaluated as soon as it is recorded, so building the
//! graph *is* the forward pass. Nodes are stored in insertion order, which is
//! a topological order; `backward` walks it in reverse, which keeps gradient
//! accumulation order fixed and results bit-reproducible.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_into, Tensor};
use super::AutodiffError;

/// Index marking a padded slot in [`Graph::gather`].
pub const PAD: usize = usize::MAX;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine(NodeId, f64),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Sigmoid(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    LogSumExp(NodeId),
    Gather(NodeId, Vec<usize>),
    GatherRows(NodeId, Vec<usize>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    Sum(NodeId),
    Reshape(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::LogSumExp(_) => "logsumexp",
            Op::Gather(..) => "gather",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Sum(_) => "sum",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of a scalar with respect to every parameter of a store.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            grads: vec![None; n_params],
        }
    }

    /// Gradient for `id`; `None` when the parameter did not take part in
    /// the computation (its gradient is zero).
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|t| (ParamId::from_index(i), t)))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }

    pub fn global_norm(&self) -> f64 {
        self.iter().map(|(_, g)| g.l2_norm_sq()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Adds `other` into `self` (fixed order, parameter by parameter).
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(t),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.is_finite())
    }
}

/// A recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn shape_err(op: &str, msg: String) -> AutodiffError {
    AutodiffError::Shape(format!("{op}: {msg}"))
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(op.name()));
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant leaf. Receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId, AutodiffError> {
        self.push(Op::Input, value)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: store.value(id).clone(),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 {
            return Err(shape_err(
                "matmul",
                format!("needs matrices, got {:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k) = va.dims2();
        let (k2, n) = vb.dims2();
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner dims differ: {:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(va.data(), vb.data(), &mut out, m, k, n, false, false);
        let t = Tensor::matrix(m, n, out)?;
        self.push(Op::MatMul(a, b), t)
    }

    fn zip_same(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                op.name(),
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(op, t)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_same(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_same(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_same(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds vector `b` to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (_, n) = va.dims2();
        if vb.rank() != 1 || vb.len() != n {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, bv) in row.iter_mut().zip(vb.data()) {
                *x += bv;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::AddBias(a, b), t)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| scale * x + shift).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::Affine(a, scale), t)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        self.affine(a, factor, 0.0)
    }

    /// Concatenation along the last axis. All parts must share rank and
    /// leading dimension.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no parts".into()));
        }
        let rank = self.value(parts[0]).rank();
        let (rows, _) = self.value(parts[0]).dims2();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != rank || v.dims2().0 != rows {
                return Err(shape_err(
                    "concat_cols",
                    format!("part {:?} does not match {rows} rows", v.shape()),
                ));
            }
            total += v.dims2().1;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
        let t = Tensor::new(shape, data)?;
        self.push(Op::ConcatCols(parts.to_vec()), t)
    }

    /// Stacks parts along the first axis; a vector counts as one row.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no parts".into()));
        }
        let cols = self.value(parts[0]).dims2().1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            let (r, c) = v.dims2();
            if c != cols || v.rank() > 2 {
                return Err(shape_err(
                    "concat_rows",
                    format!("part {:?} does not have {cols} columns", v.shape()),
                ));
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        let t = Tensor::matrix(rows, cols, data)?;
        self.push(Op::ConcatRows(parts.to_vec()), t)
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(op, t)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        let (_, n) = va.dims2();
        let mut data = Vec::with_capacity(va.len());
        for row in va.data().chunks(n) {
            let lse = log_sum_exp(row);
            data.extend(row.iter().map(|x| (x - lse).exp()));
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(Op::Softmax(a), t)
    }

    /// Log-sum-exp along the last axis: `[n] -> [1]`, `[m, n] -> [m]`.
    pub fn log_sum_exp(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        let (_, n) = va.dims2();
        let data: Vec<f64> = va.data().chunks(n).map(log_sum_exp).collect();
        let t = Tensor::vector(data)?;
        self.push(Op::LogSumExp(a), t)
    }

    /// Flat element gather: `out[p] = src.data[index[p]]`, or `pad` where
    /// `index[p] == PAD`. The result is reshaped to `shape`.
    pub fn gather(
        &mut self,
        src: NodeId,
        index: Vec<usize>,
        pad: f64,
        shape: Vec<usize>,
    ) -> Result<NodeId, AutodiffError> {
        let vs = self.value(src);
        let mut data = Vec::with_capacity(index.len());
        for &i in &index {
            if i == PAD {
                data.push(pad);
            } else if i < vs.len() {
                data.push(vs.data()[i]);
            } else {
                return Err(shape_err(
                    "gather",
                    format!("index {i} out of range for {} values", vs.len()),
                ));
            }
        }
        let t = Tensor::new(shape, data)?;
        self.push(Op::Gather(src, index), t)
    }

    /// Row selection from a matrix (or element selection from a vector).
    pub fn gather_rows(&mut self, src: NodeId, rows: &[usize]) -> Result<NodeId, AutodiffError> {
        let vs = self.value(src);
        let (m, n) = vs.dims2();
        if rows.is_empty() {
            return Err(shape_err("gather_rows", "empty selection".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= if vs.rank() == 1 { n } else { m }) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} out of range for {:?}", vs.shape()),
            ));
        }
        let (data, shape) = if vs.rank() == 1 {
            (rows.iter().map(|&r| vs.data()[r]).collect(), vec![rows.len()])
        } else {
            let mut d = Vec::with_capacity(rows.len() * n);
            for &r in rows {
                d.extend_from_slice(vs.row(r));
            }
            (d, vec![rows.len(), n])
        };
        let t = Tensor::new(shape, data)?;
        self.push(Op::GatherRows(src, rows.to_vec()), t)
    }

    /// Columns `start..start+len` along the last axis.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        let (m, n) = va.dims2();
        if len == 0 || start + len > n {
            return Err(shape_err(
                "slice_cols",
                format!("{start}..{} out of {n}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&va.row(r)[start..start + len]);
        }
        let shape = if va.rank() == 1 { vec![len] } else { vec![m, len] };
        let t = Tensor::new(shape, data)?;
        self.push(Op::SliceCols(a, start), t)
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        let (m, n) = va.dims2();
        if va.rank() != 2 || len == 0 || start + len > m {
            return Err(shape_err(
                "slice_rows",
                format!("{start}..{} out of {:?}", start + len, va.shape()),
            ));
        }
        let data = va.data()[start * n..(start + len) * n].to_vec();
        let t = Tensor::matrix(len, n, data)?;
        self.push(Op::SliceRows(a, start), t)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, AutodiffError> {
        let t = self.value(a).reshaped(shape)?;
        self.push(Op::Reshape(a), t)
    }

    /// Reverse pass from a one-element node.
    ///
    /// Parameters unreachable from `output` get no entry; their gradient is
    /// zero and they are reported through `log::debug!`.
    pub fn backward(&self, output: NodeId, n_params: usize) -> Result<Gradients, AutodiffError> {
        if self.value(output).len() != 1 {
            return Err(AutodiffError::NonScalarOutput(self.shape(output).to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::filled(self.shape(output), 1.0));
        let mut grads = Gradients::empty(n_params);

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    if pid.index() >= grads.grads.len() {
                        grads.grads.resize(pid.index() + 1, None);
                    }
                    grads.grads[pid.index()] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k) = va.dims2();
                    let (_, n) = vb.dims2();
                    let mut da = vec![0.0; m * k];
                    matmul_into(g.data(), vb.data(), &mut da, m, n, k, false, true);
                    let mut db = vec![0.0; k * n];
                    matmul_into(va.data(), g.data(), &mut db, k, m, n, true, false);
                    accumulate(&mut adj, *a, va.shape(), &da);
                    accumulate(&mut adj, *b, vb.shape(), &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.shape(), g.data());
                    accumulate(&mut adj, *b, g.shape(), g.data());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, g.shape(), g.data());
                    let neg: Vec<f64> = g.data().iter().map(|x| -x).collect();
                    accumulate(&mut adj, *b, g.shape(), &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj, *a, va.shape(), &da);
                    accumulate(&mut adj, *b, vb.shape(), &db);
                }
                Op::AddBias(a, b) => {
                    accumulate(&mut adj, *a, g.shape(), g.data());
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(&mut adj, *b, &[n], &db);
                }
                Op::Affine(a, scale) => {
                    let da: Vec<f64> = g.data().iter().map(|x| x * scale).collect();
                    accumulate(&mut adj, *a, g.shape(), &da);
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2();
                    let mut offset = 0;
                    for &p in parts {
                        let vp = self.value(p);
                        let w = vp.dims2().1;
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut adj, p, vp.shape(), &dp);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let vp = self.value(p);
                        let l = vp.len();
                        accumulate(&mut adj, p, vp.shape(), &g.data()[offset..offset + l]);
                        offset += l;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let da: Vec<f64> = g.data().iter().zip(y.data()).map(|(d, s)| d * s * (1.0 - s)).collect();
                    accumulate(&mut adj, *a, y.shape(), &da);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(d, x)| if *x > 0.0 { *d } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, x.shape(), &da);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let da: Vec<f64> = g.data().iter().zip(y.data()).map(|(d, t)| d * (1.0 - t * t)).collect();
                    accumulate(&mut adj, *a, y.shape(), &da);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let (_, n) = y.dims2();
                    let mut da = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        da.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                    }
                    accumulate(&mut adj, *a, y.shape(), &da);
                }
                Op::LogSumExp(a) => {
                    let x = self.value(*a);
                    let (_, n) = x.dims2();
                    let mut da = Vec::with_capacity(x.len());
                    for (r, row) in x.data().chunks(n).enumerate() {
                        let lse = node.value.data()[r];
                        let gr = g.data()[r];
                        da.extend(row.iter().map(|v| gr * (v - lse).exp()));
                    }
                    accumulate(&mut adj, *a, x.shape(), &da);
                }
                Op::Gather(src, index) => {
                    let vs = self.value(*src);
                    let mut ds = vec![0.0; vs.len()];
                    for (&i, d) in index.iter().zip(g.data()) {
                        if i != PAD {
                            ds[i] += d;
                        }
                    }
                    accumulate(&mut adj, *src, vs.shape(), &ds);
                }
                Op::GatherRows(src, rows) => {
                    let vs = self.value(*src);
                    let mut ds = vec![0.0; vs.len()];
                    if vs.rank() == 1 {
                        for (&r, d) in rows.iter().zip(g.data()) {
                            ds[r] += d;
                        }
                    } else {
                        let n = vs.dims2().1;
                        for (k, &r) in rows.iter().enumerate() {
                            for c in 0..n {
                                ds[r * n + c] += g.data()[k * n + c];
                            }
                        }
                    }
                    accumulate(&mut adj, *src, vs.shape(), &ds);
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let (m, n) = va.dims2();
                    let len = g.dims2().1;
                    let mut da = vec![0.0; m * n];
                    for r in 0..m {
                        da[r * n + start..r * n + start + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut adj, *a, va.shape(), &da);
                }
                Op::SliceRows(a, start) => {
                    let va = self.value(*a);
                    let n = va.dims2().1;
                    let mut da = vec![0.0; va.len()];
                    da[start * n..start * n + g.len()].copy_from_slice(g.data());
                    accumulate(&mut adj, *a, va.shape(), &da);
                }
                Op::Sum(a) => {
                    let va = self.value(*a);
                    let da = vec![g.item(); va.len()];
                    accumulate(&mut adj, *a, va.shape(), &da);
                }
                Op::Reshape(a) => {
                    let va = self.value(*a);
                    accumulate(&mut adj, *a, va.shape(), g.data());
                }
            }
        }

        if log::log_enabled!(log::Level::Debug) {
            for (&pid, _) in self.param_nodes.iter() {
                if grads.get(pid).is_none() {
                    log::debug!("parameter #{} is detached from the output", pid.index());
                }
            }
        }
        if !grads.is_finite() {
            return Err(AutodiffError::NonFinite("backward"));
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, shape: &[usize], delta: &[f64]) {
    match &mut adj[id.0] {
        Some(t) => {
            for (a, d) in t.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient shape"));
        }
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

/// Max-shifted log-sum-exp of a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_in(g: &mut Graph, data: &[f64]) -> NodeId {
        g.input(Tensor::vector(data.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn identity_matmul_returns_input() {
        let mut g = Graph::new();
        let eye = g.input(Tensor::eye(3)).unwrap();
        let x = g.input(Tensor::matrix(3, 1, vec![0.3, -1.2, 7.0]).unwrap()).unwrap();
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.3, -1.2, 7.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = vec_in(&mut g, &[0.0, 0.0]);
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut store = ParamStore::new();
        let pid = store.insert("x", Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, pid);
        let s = g.sum(x).unwrap();
        let grads = g.backward(s, store.len()).unwrap();
        assert_eq!(grads.get(pid).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut store = ParamStore::new();
        let pid = store.insert("x", Tensor::scalar(0.0)).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, pid);
        let y = g.sigmoid(x).unwrap();
        let grads = g.backward(y, store.len()).unwrap();
        assert_eq!(grads.get(pid).unwrap().item(), 0.25);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::new();
        let x = vec_in(&mut g, &[1.0, 2.0]);
        assert!(matches!(g.backward(x, 0), Err(AutodiffError::NonScalarOutput(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = vec_in(&mut g, &[1.0, 2.0]);
        let b = vec_in(&mut g, &[1.0, 2.0, 3.0]);
        assert!(matches!(g.add(a, b), Err(AutodiffError::Shape(_))));
        let m = g.input(Tensor::zeros(&[2, 3])).unwrap();
        assert!(g.matmul(m, m).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut g = Graph::new();
        let a = vec_in(&mut g, &[1e300]);
        assert!(matches!(g.affine(a, 1e300, 0.0), Err(AutodiffError::NonFinite(_))));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(2, 2, vec![-1e30, 0.0, 3.0, 3.0]).unwrap()).unwrap();
        let y = g.log_sum_exp(x).unwrap();
        assert_eq!(g.value(y).data()[0], 0.0);
        assert!((g.value(y).data()[1] - (3.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gather_pads_and_scatters_back() {
        let mut store = ParamStore::new();
        let pid = store.insert("x", Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let x = g.param(&store, pid);
        let y = g.gather(x, vec![2, PAD, 2, 0], -5.0, vec![2, 2]).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -5.0, 3.0, 1.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s, 1).unwrap();
        assert_eq!(grads.get(pid).unwrap().data(), &[1.0, 0.0, 2.0]);
    }
}
