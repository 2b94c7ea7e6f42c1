//! Computation graph: build once per batch, forward, walk backwards.
//!
//! Nodes are appended in topological order, so forward evaluation is a
//! single left-to-right sweep and reverse accumulation a right-to-left one.
//! Learnable tensors live in a [`ParamSet`] outside the graph; `forward`
//! re-reads their current values, which is what lets the finite-difference
//! checker re-evaluate the same graph under perturbed weights.

use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// A named learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    value: Tensor,
    grad: Tensor,
}

impl Parameter {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
}

/// The store of all learnable parameters of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, adj: &Tensor) {
        let g = self.params[id.0].grad.data_mut();
        for (gi, ai) in g.iter_mut().zip(adj.data()) {
            *gi += ai;
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Bound input tensor; no gradient.
    Constant,
    /// Leaf referencing a ParamSet entry; gradient flows into the set.
    Param(ParamId),
    MatMul,
    Transpose,
    /// Elementwise with broadcasting (equal shapes, scalar, or row vector).
    Add,
    Mul,
    Relu,
    Exp,
    Clamp { lo: f64, hi: f64 },
    /// Column-wise concatenation of 2-D inputs.
    Concat,
    /// Row gather from a table; adjoints scatter-add (duplicates accumulate).
    Gather { indices: Vec<usize> },
    /// Row-wise log-softmax.
    LogSoftmax,
    /// Row-wise x / sqrt(|x|^2 + eps^2).
    RowNormalize { eps: f64 },
    Sum,
    Mean,
    /// Sum of absolute values; subgradient sign(x), sign(0) = 0.
    L1,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Clamp { .. } => "clamp",
            Op::Concat => "concat",
            Op::Gather { .. } => "gather",
            Op::LogSoftmax => "log_softmax",
            Op::RowNormalize { .. } => "row_normalize",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::L1 => "l1_norm",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    value: Option<Tensor>,
    adjoint: Option<Tensor>,
}

/// How the second operand of an elementwise op lines up with the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Left operand is the full tensor, right broadcasts.
    ScalarRight,
    RowRight,
    /// Right operand is the full tensor, left broadcasts.
    ScalarLeft,
    RowLeft,
}

fn broadcast_kind(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<(Broadcast, Vec<usize>), NumericsError> {
    let an: usize = a.iter().product();
    let bn: usize = b.iter().product();
    if a == b {
        return Ok((Broadcast::Same, a.to_vec()));
    }
    if bn == 1 {
        return Ok((Broadcast::ScalarRight, a.to_vec()));
    }
    if an == 1 {
        return Ok((Broadcast::ScalarLeft, b.to_vec()));
    }
    let row_of = |s: &[usize]| -> Option<usize> {
        match s.len() {
            1 => Some(s[0]),
            2 if s[0] == 1 => Some(s[1]),
            _ => None,
        }
    };
    if a.len() == 2 {
        if let Some(cols) = row_of(b) {
            if cols == a[1] {
                return Ok((Broadcast::RowRight, a.to_vec()));
            }
        }
    }
    if b.len() == 2 {
        if let Some(cols) = row_of(a) {
            if cols == b[1] {
                return Ok((Broadcast::RowLeft, b.to_vec()));
            }
        }
    }
    Err(NumericsError::Shape {
        op,
        details: format!("cannot broadcast {:?} with {:?}", a, b),
    })
}

/// Reverse-mode computation graph over a fixed operator set.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            value: None,
            adjoint: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Shape a node will have once evaluated (known at build time).
    pub fn value_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    // ── builders ────────────────────────────────────────────────────────

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        let id = self.push(Op::Constant, vec![], shape);
        self.nodes[id.0].value = Some(value);
        id
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        let shape = params.value(id).shape().to_vec();
        self.push(Op::Param(id), vec![], shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumericsError::Shape {
                op: "matmul",
                details: format!("{:?} x {:?}", sa, sb),
            });
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul, vec![a, b], shape))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let s = self.shape_of(x);
        if s.len() != 2 {
            return Err(NumericsError::Shape {
                op: "transpose",
                details: format!("{:?}", s),
            });
        }
        let shape = vec![s[1], s[0]];
        Ok(self.push(Op::Transpose, vec![x], shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (_, shape) = broadcast_kind("add", self.shape_of(a), self.shape_of(b))?;
        Ok(self.push(Op::Add, vec![a, b], shape))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (_, shape) = broadcast_kind("mul", self.shape_of(a), self.shape_of(b))?;
        Ok(self.push(Op::Mul, vec![a, b], shape))
    }

    /// x * c for a constant c.
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, NumericsError> {
        let k = self.scalar(c);
        self.mul(x, k)
    }

    /// x + c for a constant c.
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId, NumericsError> {
        let k = self.scalar(c);
        self.add(x, k)
    }

    /// a - b, composed as a + (-1) * b.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape_of(x).to_vec();
        self.push(Op::Relu, vec![x], shape)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape_of(x).to_vec();
        self.push(Op::Exp, vec![x], shape)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let shape = self.shape_of(x).to_vec();
        self.push(Op::Clamp { lo, hi }, vec![x], shape)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Contract("concat of zero tensors".into()));
        }
        let rows = self.shape_of(parts[0]).first().copied().unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape_of(p);
            if s.len() != 2 || s[0] != rows {
                return Err(NumericsError::Shape {
                    op: "concat",
                    details: format!("expected {} rows, got {:?}", rows, s),
                });
            }
            cols += s[1];
        }
        Ok(self.push(Op::Concat, parts.to_vec(), vec![rows, cols]))
    }

    pub fn gather(&mut self, table: NodeId, indices: Vec<usize>) -> Result<NodeId, NumericsError> {
        let s = self.shape_of(table);
        if s.len() != 2 {
            return Err(NumericsError::Shape {
                op: "gather",
                details: format!("table must be 2-D, got {:?}", s),
            });
        }
        let (rows, width) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::Contract(format!(
                "gather index {} out of range for table with {} rows",
                bad, rows
            )));
        }
        let shape = vec![indices.len(), width];
        Ok(self.push(Op::Gather { indices }, vec![table], shape))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape_of(x).to_vec();
        self.push(Op::LogSoftmax, vec![x], shape)
    }

    pub fn row_normalize(&mut self, x: NodeId, eps: f64) -> NodeId {
        let shape = self.shape_of(x).to_vec();
        self.push(Op::RowNormalize { eps }, vec![x], shape)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum, vec![x], vec![1])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean, vec![x], vec![1])
    }

    pub fn l1_norm(&mut self, x: NodeId) -> NodeId {
        self.push(Op::L1, vec![x], vec![1])
    }

    /// y = x W + b  with b broadcast across rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    // ── evaluation ──────────────────────────────────────────────────────

    /// Evaluates every node left to right, re-reading parameter values.
    pub fn forward(&mut self, params: &ParamSet) -> Result<(), NumericsError> {
        for i in 0..self.nodes.len() {
            let value = match &self.nodes[i].op {
                Op::Constant => continue,
                Op::Param(pid) => params.value(*pid).clone(),
                _ => self.eval(i)?,
            };
            if !value.all_finite() {
                return Err(NumericsError::NonFinite {
                    op: self.nodes[i].op.name(),
                    node: i,
                });
            }
            self.nodes[i].value = Some(value);
        }
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("forward has not populated this node")
    }

    fn input_value(&self, node: usize, slot: usize) -> &Tensor {
        let id = self.nodes[node].inputs[slot];
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("input evaluated before use")
    }

    fn eval(&self, i: usize) -> Result<Tensor, NumericsError> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Param(_) => unreachable!("leaves handled in forward"),
            Op::MatMul => {
                let a = self.input_value(i, 0);
                let b = self.input_value(i, 1);
                Ok(matmul(a, b))
            }
            Op::Transpose => {
                let x = self.input_value(i, 0);
                let (r, c) = x.view2();
                let mut out = Tensor::zeros(vec![c, r]);
                for i in 0..r {
                    for j in 0..c {
                        out.data_mut()[j * r + i] = x.data()[i * c + j];
                    }
                }
                Ok(out)
            }
            Op::Add => self.eval_elementwise(i, "add", |x, y| x + y),
            Op::Mul => self.eval_elementwise(i, "mul", |x, y| x * y),
            Op::Relu => {
                let x = self.input_value(i, 0);
                Ok(map(x, |v| v.max(0.0)))
            }
            Op::Exp => {
                let x = self.input_value(i, 0);
                Ok(map(x, f64::exp))
            }
            Op::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let x = self.input_value(i, 0);
                Ok(map(x, |v| v.clamp(lo, hi)))
            }
            Op::Concat => {
                let rows = node.shape[0];
                let cols = node.shape[1];
                let mut out = Tensor::zeros(vec![rows, cols]);
                let mut offset = 0;
                for slot in 0..node.inputs.len() {
                    let part = self.input_value(i, slot);
                    let (_, w) = part.view2();
                    for r in 0..rows {
                        let dst = r * cols + offset;
                        out.data_mut()[dst..dst + w].copy_from_slice(part.row(r));
                    }
                    offset += w;
                }
                Ok(out)
            }
            Op::Gather { indices } => {
                let table = self.input_value(i, 0);
                let (_, width) = table.view2();
                let mut out = Tensor::zeros(vec![indices.len(), width]);
                for (r, &idx) in indices.iter().enumerate() {
                    out.data_mut()[r * width..(r + 1) * width].copy_from_slice(table.row(idx));
                }
                Ok(out)
            }
            Op::LogSoftmax => {
                let x = self.input_value(i, 0);
                let (rows, cols) = x.view2();
                let mut out = Tensor::zeros(x.shape().to_vec());
                for r in 0..rows {
                    let row = &x.data()[r * cols..(r + 1) * cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    for c in 0..cols {
                        out.data_mut()[r * cols + c] = row[c] - lse;
                    }
                }
                Ok(out)
            }
            Op::RowNormalize { eps } => {
                let x = self.input_value(i, 0);
                let (rows, cols) = x.view2();
                let mut out = Tensor::zeros(x.shape().to_vec());
                for r in 0..rows {
                    let row = &x.data()[r * cols..(r + 1) * cols];
                    let s = (row.iter().map(|v| v * v).sum::<f64>() + eps * eps).sqrt();
                    for c in 0..cols {
                        out.data_mut()[r * cols + c] = row[c] / s;
                    }
                }
                Ok(out)
            }
            Op::Sum => {
                let x = self.input_value(i, 0);
                Ok(Tensor::scalar(x.data().iter().sum()))
            }
            Op::Mean => {
                let x = self.input_value(i, 0);
                Ok(Tensor::scalar(
                    x.data().iter().sum::<f64>() / x.len() as f64,
                ))
            }
            Op::L1 => {
                let x = self.input_value(i, 0);
                Ok(Tensor::scalar(x.data().iter().map(|v| v.abs()).sum()))
            }
        }
    }

    fn eval_elementwise(
        &self,
        i: usize,
        opname: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumericsError> {
        let a = self.input_value(i, 0);
        let b = self.input_value(i, 1);
        let (kind, shape) = broadcast_kind(opname, a.shape(), b.shape())?;
        let mut out = Tensor::zeros(shape);
        match kind {
            Broadcast::Same => {
                for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                    *o = f(x, y);
                }
            }
            Broadcast::ScalarRight => {
                let y = b.data()[0];
                for (o, &x) in out.data_mut().iter_mut().zip(a.data()) {
                    *o = f(x, y);
                }
            }
            Broadcast::ScalarLeft => {
                let x = a.data()[0];
                for (o, &y) in out.data_mut().iter_mut().zip(b.data()) {
                    *o = f(x, y);
                }
            }
            Broadcast::RowRight => {
                let (rows, cols) = a.view2();
                for r in 0..rows {
                    for c in 0..cols {
                        out.data_mut()[r * cols + c] = f(a.data()[r * cols + c], b.data()[c]);
                    }
                }
            }
            Broadcast::RowLeft => {
                let (rows, cols) = b.view2();
                for r in 0..rows {
                    for c in 0..cols {
                        out.data_mut()[r * cols + c] = f(a.data()[c], b.data()[r * cols + c]);
                    }
                }
            }
        }
        Ok(out)
    }

    // ── reverse accumulation ────────────────────────────────────────────

    /// Reverse accumulation from a scalar root into parameter gradients.
    ///
    /// Adjoints and parameter gradients are reset on entry, so calling this
    /// twice without re-running forward yields identical gradients.
    pub fn backward(&mut self, root: NodeId, params: &mut ParamSet) -> Result<(), NumericsError> {
        let root_value = self.nodes[root.0]
            .value
            .as_ref()
            .ok_or_else(|| NumericsError::Contract("backward before forward".into()))?;
        if !root_value.is_scalar() {
            return Err(NumericsError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.adjoint = None;
        }
        params.zero_grads();
        self.nodes[root.0].adjoint = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(adj) = self.nodes[i].adjoint.take() else {
                continue;
            };
            self.propagate(i, &adj, params);
            self.nodes[i].adjoint = Some(adj);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contribution: Tensor) {
        match &mut self.nodes[id.0].adjoint {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, i: usize, adj: &Tensor, params: &mut ParamSet) {
        let inputs = self.nodes[i].inputs.clone();
        match self.nodes[i].op.clone() {
            Op::Constant => {}
            Op::Param(pid) => params.accumulate_grad(pid, adj),
            Op::MatMul => {
                let a = self.input_value(i, 0).clone();
                let b = self.input_value(i, 1).clone();
                // dA = adj . B^T ; dB = A^T . adj
                let da = matmul_nt(adj, &b);
                let db = matmul_tn(&a, adj);
                self.accumulate(inputs[0], da);
                self.accumulate(inputs[1], db);
            }
            Op::Transpose => {
                let (r, c) = adj.view2();
                let mut da = Tensor::zeros(vec![c, r]);
                for i2 in 0..r {
                    for j in 0..c {
                        da.data_mut()[j * r + i2] = adj.data()[i2 * c + j];
                    }
                }
                self.accumulate(inputs[0], da);
            }
            Op::Add => {
                let sa = self.input_value(i, 0).shape().to_vec();
                let sb = self.input_value(i, 1).shape().to_vec();
                self.accumulate(inputs[0], reduce_to_shape(adj, &sa));
                self.accumulate(inputs[1], reduce_to_shape(adj, &sb));
            }
            Op::Mul => {
                let a = self.input_value(i, 0).clone();
                let b = self.input_value(i, 1).clone();
                let da_full = expand_mul(adj, &b);
                let db_full = expand_mul(adj, &a);
                self.accumulate(inputs[0], reduce_to_shape(&da_full, a.shape()));
                self.accumulate(inputs[1], reduce_to_shape(&db_full, b.shape()));
            }
            Op::Relu => {
                let x = self.input_value(i, 0);
                let mut da = adj.clone();
                for (d, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *d = 0.0;
                    }
                }
                self.accumulate(inputs[0], da);
            }
            Op::Exp => {
                let y = self.nodes[i].value.as_ref().expect("forward ran").clone();
                let mut da = adj.clone();
                for (d, &yv) in da.data_mut().iter_mut().zip(y.data()) {
                    *d *= yv;
                }
                self.accumulate(inputs[0], da);
            }
            Op::Clamp { lo, hi } => {
                let x = self.input_value(i, 0);
                let mut da = adj.clone();
                for (d, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                    if xv < lo || xv > hi {
                        *d = 0.0;
                    }
                }
                self.accumulate(inputs[0], da);
            }
            Op::Concat => {
                let (rows, cols) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                let mut offset = 0;
                for (slot, &input) in inputs.iter().enumerate() {
                    let w = self.input_value(i, slot).view2().1;
                    let mut part = Tensor::zeros(vec![rows, w]);
                    for r in 0..rows {
                        let src = r * cols + offset;
                        part.data_mut()[r * w..(r + 1) * w]
                            .copy_from_slice(&adj.data()[src..src + w]);
                    }
                    offset += w;
                    self.accumulate(input, part);
                }
            }
            Op::Gather { indices } => {
                let table_shape = self.input_value(i, 0).shape().to_vec();
                let width = table_shape[1];
                let mut dtable = Tensor::zeros(table_shape);
                for (r, &idx) in indices.iter().enumerate() {
                    let dst = idx * width;
                    let src = r * width;
                    for c in 0..width {
                        dtable.data_mut()[dst + c] += adj.data()[src + c];
                    }
                }
                self.accumulate(inputs[0], dtable);
            }
            Op::LogSoftmax => {
                // dx = adj - softmax(x) * rowsum(adj)
                let y = self.nodes[i].value.as_ref().expect("forward ran").clone();
                let (rows, cols) = y.view2();
                let mut da = adj.clone();
                for r in 0..rows {
                    let row_sum: f64 = adj.data()[r * cols..(r + 1) * cols].iter().sum();
                    for c in 0..cols {
                        let p = y.data()[r * cols + c].exp();
                        da.data_mut()[r * cols + c] -= p * row_sum;
                    }
                }
                self.accumulate(inputs[0], da);
            }
            Op::RowNormalize { eps } => {
                // y = x / s with s = sqrt(|x|^2 + eps^2):
                // dx = (adj - (adj . y) y) / s
                let x = self.input_value(i, 0).clone();
                let y = self.nodes[i].value.as_ref().expect("forward ran").clone();
                let (rows, cols) = x.view2();
                let mut da = Tensor::zeros(x.shape().to_vec());
                for r in 0..rows {
                    let xr = &x.data()[r * cols..(r + 1) * cols];
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let ar = &adj.data()[r * cols..(r + 1) * cols];
                    let s = (xr.iter().map(|v| v * v).sum::<f64>() + eps * eps).sqrt();
                    let dot: f64 = ar.iter().zip(yr).map(|(a, y)| a * y).sum();
                    for c in 0..cols {
                        da.data_mut()[r * cols + c] = (ar[c] - dot * yr[c]) / s;
                    }
                }
                self.accumulate(inputs[0], da);
            }
            Op::Sum => {
                let shape = self.input_value(i, 0).shape().to_vec();
                let g = adj.item();
                let mut da = Tensor::zeros(shape);
                da.fill(g);
                self.accumulate(inputs[0], da);
            }
            Op::Mean => {
                let shape = self.input_value(i, 0).shape().to_vec();
                let n: usize = shape.iter().product();
                let g = adj.item() / n as f64;
                let mut da = Tensor::zeros(shape);
                da.fill(g);
                self.accumulate(inputs[0], da);
            }
            Op::L1 => {
                let x = self.input_value(i, 0);
                let g = adj.item();
                let mut da = Tensor::zeros(x.shape().to_vec());
                for (d, &xv) in da.data_mut().iter_mut().zip(x.data()) {
                    *d = g * signum_zero(xv);
                }
                self.accumulate(inputs[0], da);
            }
        }
    }
}

fn signum_zero(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

/// C = A . B with A [n,k], B [k,m].
fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = a.view2();
    let (_, m) = b.view2();
    let mut out = Tensor::zeros(vec![n, m]);
    for i in 0..n {
        let arow = &a.data()[i * k..(i + 1) * k];
        let orow = &mut out.data_mut()[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[p * m..(p + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// C = A . B^T with A [n,k], B [m,k].
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = a.view2();
    let (m, _) = b.view2();
    let mut out = Tensor::zeros(vec![n, m]);
    for i in 0..n {
        let arow = &a.data()[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b.data()[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out.data_mut()[i * m + j] = acc;
        }
    }
    out
}

/// C = A^T . B with A [k,n], B [k,m].
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n) = a.view2();
    let (_, m) = b.view2();
    let mut out = Tensor::zeros(vec![n, m]);
    for p in 0..k {
        let arow = &a.data()[p * n..(p + 1) * n];
        let brow = &b.data()[p * m..(p + 1) * m];
        for i in 0..n {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data_mut()[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// adj (full shape) times `other` broadcast-expanded to the same shape.
fn expand_mul(adj: &Tensor, other: &Tensor) -> Tensor {
    if adj.shape() == other.shape() {
        let mut out = adj.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(other.data()) {
            *o *= v;
        }
        return out;
    }
    if other.is_scalar() {
        let v = other.data()[0];
        return map(adj, |a| a * v);
    }
    // other is a row vector broadcast over adj's rows
    let (rows, cols) = adj.view2();
    let mut out = adj.clone();
    for r in 0..rows {
        for c in 0..cols {
            out.data_mut()[r * cols + c] *= other.data()[c];
        }
    }
    out
}

/// Sums a full-shape adjoint down to the (possibly broadcast) input shape.
fn reduce_to_shape(adj: &Tensor, target: &[usize]) -> Tensor {
    if adj.shape() == target {
        return adj.clone();
    }
    let tn: usize = target.iter().product();
    if tn == 1 {
        return Tensor::new(target.to_vec(), vec![adj.data().iter().sum()])
            .expect("scalar reduction");
    }
    // row-vector target: sum across rows
    let (rows, cols) = adj.view2();
    let mut out = Tensor::zeros(target.to_vec());
    for r in 0..rows {
        for c in 0..cols {
            out.data_mut()[c] += adj.data()[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} vs {}", a, b);
    }

    #[test]
    fn matmul_hand_example() {
        // 1x2 [1,2] times 2x1 [3,4]^T -> [[11]]
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        g.forward(&ParamSet::new()).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        g.forward(&ParamSet::new()).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn log_softmax_symmetry() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = g.log_softmax(x);
        g.forward(&ParamSet::new()).unwrap();
        let ln2 = 2.0f64.ln();
        assert_close(g.value(y).data()[0], -ln2, 1e-15);
        assert_close(g.value(y).data()[1], -ln2, 1e-15);
    }

    #[test]
    fn square_gradient() {
        // f(x) = x*x at x=3 -> grad 6
        let mut ps = ParamSet::new();
        let x = ps.add("x", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let xn = g.param(&ps, x);
        let y = g.mul(xn, xn).unwrap();
        g.forward(&ps).unwrap();
        g.backward(y, &mut ps).unwrap();
        assert_eq!(ps.grad(x).data(), &[6.0]);
    }

    #[test]
    fn softmax_ce_uniform_gradient() {
        // CE with uniform logits over 4 classes, true class 0:
        // grad on logits = p - onehot = [-0.75, 0.25, 0.25, 0.25]
        let mut ps = ParamSet::new();
        let logits = ps.add("logits", Tensor::matrix(1, 4, vec![0.0; 4]).unwrap());
        let mut g = Graph::new();
        let ln = g.param(&ps, logits);
        let lsm = g.log_softmax(ln);
        let mask = g.constant(Tensor::matrix(1, 4, vec![-1.0, 0.0, 0.0, 0.0]).unwrap());
        let picked = g.mul(lsm, mask).unwrap();
        let loss = g.sum(picked);
        g.forward(&ps).unwrap();
        g.backward(loss, &mut ps).unwrap();
        let grad = ps.grad(logits).data();
        assert_close(grad[0], -0.75, 1e-12);
        assert_close(grad[1], 0.25, 1e-12);
        assert_close(grad[2], 0.25, 1e-12);
        assert_close(grad[3], 0.25, 1e-12);
    }

    #[test]
    fn backward_is_idempotent_without_reforward() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let mut g = Graph::new();
        let xn = g.param(&ps, x);
        let r = g.relu(xn);
        let e = g.exp(r);
        let loss = g.sum(e);
        g.forward(&ps).unwrap();
        g.backward(loss, &mut ps).unwrap();
        let first = ps.grad(x).data().to_vec();
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(first, ps.grad(x).data());
    }

    #[test]
    fn broadcast_add_commutes_and_matches_tiling() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = g.constant(Tensor::new(vec![3], vec![10.0, 20.0, 30.0]).unwrap());
        let ab = g.add(a, b).unwrap();
        let ba = g.add(b, a).unwrap();
        let tiled = g.constant(
            Tensor::matrix(2, 3, vec![10.0, 20.0, 30.0, 10.0, 20.0, 30.0]).unwrap(),
        );
        let explicit = g.add(a, tiled).unwrap();
        g.forward(&ParamSet::new()).unwrap();
        assert_eq!(g.value(ab).data(), g.value(ba).data());
        assert_eq!(g.value(ab).data(), g.value(explicit).data());
    }

    #[test]
    fn gather_accumulates_duplicate_indices() {
        let mut ps = ParamSet::new();
        let table = ps.add("table", Tensor::matrix(3, 2, vec![1.0; 6]).unwrap());
        let mut g = Graph::new();
        let t = g.param(&ps, table);
        let rows = g.gather(t, vec![1, 1, 2]).unwrap();
        let loss = g.sum(rows);
        g.forward(&ps).unwrap();
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(table).data(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut ps = ParamSet::new();
        let x = ps.add("x", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let mut g = Graph::new();
        let xn = g.param(&ps, x);
        let y = g.relu(xn);
        g.forward(&ps).unwrap();
        assert!(matches!(
            g.backward(y, &mut ps),
            Err(NumericsError::Contract(_))
        ));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1000.0));
        let e = g.exp(x);
        let _ = e;
        assert!(matches!(
            g.forward(&ParamSet::new()),
            Err(NumericsError::NonFinite { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported_at_build_time() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert!(matches!(
            g.matmul(a, b),
            Err(NumericsError::Shape { .. })
        ));
    }
}
