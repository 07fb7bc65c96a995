use std::collections::{BTreeMap, HashMap};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Add,
    Sub,
    Mul,
    MatVec,
    VecMat,
    MatMulNt,
    AddBias,
    Concat,
    Slice,
    Reshape,
    Broadcast,
    Sum,
    Tanh,
    Sigmoid,
    Softmax,
    SquaredNorm,
    Scale,
    AddConst,
    Normalize,
    ShiftRight,
    Conv1d,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    VecMat(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Slice { src: NodeId, start: usize },
    Reshape(NodeId),
    Broadcast(NodeId),
    Sum(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    SquaredNorm(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Normalize(NodeId),
    ShiftRight(NodeId),
    Conv1d(NodeId, NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::MatVec(..) => OpKind::MatVec,
            Op::VecMat(..) => OpKind::VecMat,
            Op::MatMulNt(..) => OpKind::MatMulNt,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Concat(..) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Broadcast(..) => OpKind::Broadcast,
            Op::Sum(..) => OpKind::Sum,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Softmax(..) => OpKind::Softmax,
            Op::SquaredNorm(..) => OpKind::SquaredNorm,
            Op::Scale(..) => OpKind::Scale,
            Op::AddConst(..) => OpKind::AddConst,
            Op::Normalize(..) => OpKind::Normalize,
            Op::ShiftRight(..) => OpKind::ShiftRight,
            Op::Conv1d(..) => OpKind::Conv1d,
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatVec(a, b)
            | Op::VecMat(a, b)
            | Op::MatMulNt(a, b)
            | Op::AddBias(a, b)
            | Op::Conv1d(a, b) => vec![*a, *b],
            Op::Concat(xs) => xs.clone(),
            Op::Slice { src, .. } => vec![*src],
            Op::Reshape(a)
            | Op::Broadcast(a)
            | Op::Sum(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::SquaredNorm(a)
            | Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Normalize(a)
            | Op::ShiftRight(a) => vec![*a],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Define-by-run computation graph.
///
/// Values are computed when a node is created, so every node is evaluated
/// exactly once and shape errors surface at construction. Nodes can only
/// reference earlier nodes, which keeps the graph acyclic.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<String, NodeId>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &'static str, a: (NodeId, &Tensor), b: (NodeId, &Tensor)) -> Error {
    Error::Shape {
        op,
        lhs: format!("node #{}", a.0 .0),
        lhs_dims: a.1.dims().to_vec(),
        rhs: format!("node #{}", b.0 .0),
        rhs_dims: b.1.dims().to_vec(),
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Value of a node, cloned.
    pub fn evaluate(&self, id: NodeId) -> Tensor {
        self.nodes[id.0].value.clone()
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    fn dims(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.dims()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: kind_name(op.kind()),
            });
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Input, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Bind a named parameter. Repeated calls return the same node so that
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let t = params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let id = self.input(t);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn bound_param(&self, name: &str) -> Option<NodeId> {
        self.bound.get(name).copied()
    }

    fn binary_same(&mut self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err(op, (a, self.value(a)), (b, self.value(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same(a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let v = Tensor::from_raw(x.dims().to_vec(), data);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same(a, b, "sub")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let v = Tensor::from_raw(x.dims().to_vec(), data);
        self.push(Op::Sub(a, b), v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same(a, b, "mul")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let v = Tensor::from_raw(x.dims().to_vec(), data);
        self.push(Op::Mul(a, b), v)
    }

    /// `m · v` for `m: [R, C]`, `v: [C]`.
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.rank() != 2 || vt.rank() != 1 || mt.dims()[1] != vt.dims()[0] {
            return Err(shape_err("matvec", (m, mt), (v, vt)));
        }
        let c = mt.dims()[1];
        let out = (0..mt.dims()[0])
            .map(|r| dot(&mt.data()[r * c..(r + 1) * c], vt.data()))
            .collect();
        let val = Tensor::from_raw(vec![mt.dims()[0]], out);
        self.push(Op::MatVec(m, v), val)
    }

    /// `vᵀ · m` for `v: [R]`, `m: [R, C]`.
    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> Result<NodeId> {
        let (vt, mt) = (self.value(v), self.value(m));
        if mt.rank() != 2 || vt.rank() != 1 || mt.dims()[0] != vt.dims()[0] {
            return Err(shape_err("vecmat", (v, vt), (m, mt)));
        }
        let c = mt.dims()[1];
        let mut out = vec![0.0; c];
        for (r, &w) in vt.data().iter().enumerate() {
            axpy(w, &mt.data()[r * c..(r + 1) * c], &mut out);
        }
        let val = Tensor::from_raw(vec![c], out);
        self.push(Op::VecMat(v, m), val)
    }

    /// `x · wᵀ` for `x: [N, K]`, `w: [M, K]`; applies a linear map to every row.
    pub fn matmul_nt(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xt, wt) = (self.value(x), self.value(w));
        if xt.rank() != 2 || wt.rank() != 2 || xt.dims()[1] != wt.dims()[1] {
            return Err(shape_err("matmul_nt", (x, xt), (w, wt)));
        }
        let (n, k, m) = (xt.dims()[0], xt.dims()[1], wt.dims()[0]);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let xr = &xt.data()[i * k..(i + 1) * k];
            for j in 0..m {
                out.push(dot(xr, &wt.data()[j * k..(j + 1) * k]));
            }
        }
        let val = Tensor::from_raw(vec![n, m], out);
        self.push(Op::MatMulNt(x, w), val)
    }

    /// Adds `b: [C]` to every row of `m: [N, C]`.
    pub fn add_bias(&mut self, m: NodeId, b: NodeId) -> Result<NodeId> {
        let (mt, bt) = (self.value(m), self.value(b));
        if mt.rank() != 2 || bt.rank() != 1 || mt.dims()[1] != bt.dims()[0] {
            return Err(shape_err("add_bias", (m, mt), (b, bt)));
        }
        let c = bt.len();
        let data = mt
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bt.data()[i % c])
            .collect();
        let val = Tensor::from_raw(mt.dims().to_vec(), data);
        self.push(Op::AddBias(m, b), val)
    }

    /// Concatenates along the first axis; trailing dims must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let tail = self.dims(first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.dims()[1..] != tail[..] {
                return Err(shape_err("concat", (first, self.value(first)), (p, t)));
            }
            rows += t.dims()[0];
            data.extend_from_slice(t.data());
        }
        let mut dims = vec![rows];
        dims.extend(tail);
        let val = Tensor::from_raw(dims, data);
        self.push(Op::Concat(parts.to_vec()), val)
    }

    /// Rows `start..start + len` along the first axis.
    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(src);
        if len == 0 || start + len > t.dims()[0] {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of range for dims {:?}",
                start + len,
                t.dims()
            )));
        }
        let w = t.row_len();
        let mut dims = t.dims().to_vec();
        dims[0] = len;
        let val = Tensor::from_raw(dims, t.data()[start * w..(start + len) * w].to_vec());
        self.push(Op::Slice { src, start }, val)
    }

    pub fn reshape(&mut self, a: NodeId, dims: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        if dims.is_empty() || dims.iter().product::<usize>() != t.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot reshape {:?} into {dims:?}",
                t.dims()
            )));
        }
        let val = Tensor::from_raw(dims.to_vec(), t.data().to_vec());
        self.push(Op::Reshape(a), val)
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: NodeId, i: usize) -> Result<NodeId> {
        let w = self.value(m).row_len();
        let s = self.slice(m, i, 1)?;
        self.reshape(s, &[w])
    }

    /// Stacks equally sized vectors into a `[len, dim]` matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let c = self.concat(rows)?;
        let d = self.value(rows[0]).len();
        self.reshape(c, &[rows.len(), d])
    }

    /// Repeats a scalar into a vector of length `len`.
    pub fn broadcast(&mut self, s: NodeId, len: usize) -> Result<NodeId> {
        let t = self.value(s);
        if !t.is_scalar() || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "broadcast needs a scalar and len > 0, got {:?}",
                t.dims()
            )));
        }
        let val = Tensor::from_raw(vec![len], vec![t.item(); len]);
        self.push(Op::Broadcast(s), val)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::from_raw(vec![1], vec![s]))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let val = Tensor::from_raw(t.dims().to_vec(), t.data().iter().map(|x| x.tanh()).collect());
        self.push(Op::Tanh(a), val)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let val = Tensor::from_raw(t.dims().to_vec(), t.data().iter().map(|&x| sigmoid(x)).collect());
        self.push(Op::Sigmoid(a), val)
    }

    /// Softmax over a vector, computed with max-subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::InvalidArgument(format!(
                "softmax expects a vector, got {:?}",
                t.dims()
            )));
        }
        let val = Tensor::from_raw(t.dims().to_vec(), softmax(t.data()));
        self.push(Op::Softmax(a), val)
    }

    pub fn squared_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Op::SquaredNorm(a), Tensor::from_raw(vec![1], vec![s]))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let t = self.value(a);
        let val = Tensor::from_raw(t.dims().to_vec(), t.data().iter().map(|x| x * k).collect());
        self.push(Op::Scale(a, k), val)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let t = self.value(a);
        let val = Tensor::from_raw(t.dims().to_vec(), t.data().iter().map(|x| x + c).collect());
        self.push(Op::AddConst(a), val)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.scale(a, -1.0)?;
        self.add_const(n, 1.0)
    }

    /// Divides a non-negative vector by its sum. A zero sum is reported as an
    /// error instead of producing NaN.
    pub fn normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::InvalidArgument(format!(
                "normalize expects a vector, got {:?}",
                t.dims()
            )));
        }
        let s: f64 = t.data().iter().sum();
        if s <= 0.0 {
            return Err(Error::InvalidArgument(format!("normalize of non-positive sum {s}")));
        }
        let val = Tensor::from_raw(t.dims().to_vec(), t.data().iter().map(|x| x / s).collect());
        self.push(Op::Normalize(a), val)
    }

    /// `out[0] = 0`, `out[i] = a[i - 1]`.
    pub fn shift_right(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(Error::InvalidArgument(format!(
                "shift_right expects a vector, got {:?}",
                t.dims()
            )));
        }
        let mut out = vec![0.0; t.len()];
        out[1..].copy_from_slice(&t.data()[..t.len() - 1]);
        let val = Tensor::from_raw(t.dims().to_vec(), out);
        self.push(Op::ShiftRight(a), val)
    }

    /// Same-padded 1-D convolution along the first axis.
    ///
    /// `x: [L, Cin]`, `kernel: [Cout, Cin, W]` with odd `W`, result `[L, Cout]`.
    /// Positions outside the sequence read as zero.
    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId) -> Result<NodeId> {
        let (xt, kt) = (self.value(x), self.value(kernel));
        if xt.rank() != 2 || kt.rank() != 3 || kt.dims()[1] != xt.dims()[1] || kt.dims()[2] % 2 == 0 {
            return Err(shape_err("conv1d", (x, xt), (kernel, kt)));
        }
        let (len, cin) = (xt.dims()[0], xt.dims()[1]);
        let (cout, width) = (kt.dims()[0], kt.dims()[2]);
        let pad = width / 2;
        let (xd, kd) = (xt.data(), kt.data());
        let mut out = vec![0.0; len * cout];
        for l in 0..len {
            for j in 0..width {
                let src = l as isize + j as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let xr = &xd[src as usize * cin..(src as usize + 1) * cin];
                for o in 0..cout {
                    let mut acc = 0.0;
                    for (c, xv) in xr.iter().enumerate() {
                        acc += kd[(o * cin + c) * width + j] * xv;
                    }
                    out[l * cout + o] += acc;
                }
            }
        }
        let val = Tensor::from_raw(vec![len, cout], out);
        self.push(Op::Conv1d(x, kernel), val)
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarLoss(rv.dims().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Input => {}
            Op::Add(a, b) => {
                acc(grads, self, *a, |ga| axpy(1.0, g, ga));
                acc(grads, self, *b, |gb| axpy(1.0, g, gb));
            }
            Op::Sub(a, b) => {
                acc(grads, self, *a, |ga| axpy(1.0, g, ga));
                acc(grads, self, *b, |gb| axpy(-1.0, g, gb));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(grads, self, *a, |ga| {
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                });
                acc(grads, self, *b, |gb| {
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                });
            }
            Op::MatVec(m, v) => {
                let (mt, vv) = (self.value(*m), self.value(*v).data());
                let c = mt.dims()[1];
                acc(grads, self, *m, |gm| {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, vv, &mut gm[r * c..(r + 1) * c]);
                    }
                });
                acc(grads, self, *v, |gv| {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, &mt.data()[r * c..(r + 1) * c], gv);
                    }
                });
            }
            Op::VecMat(v, m) => {
                let (vv, mt) = (self.value(*v).data(), self.value(*m));
                let c = mt.dims()[1];
                acc(grads, self, *v, |gv| {
                    for (r, gr) in gv.iter_mut().enumerate() {
                        *gr += dot(&mt.data()[r * c..(r + 1) * c], g);
                    }
                });
                acc(grads, self, *m, |gm| {
                    for (r, &w) in vv.iter().enumerate() {
                        axpy(w, g, &mut gm[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::MatMulNt(x, w) => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (n, k, m) = (xt.dims()[0], xt.dims()[1], wt.dims()[0]);
                acc(grads, self, *x, |gx| {
                    for r in 0..n {
                        let gxr = &mut gx[r * k..(r + 1) * k];
                        for j in 0..m {
                            axpy(g[r * m + j], &wt.data()[j * k..(j + 1) * k], gxr);
                        }
                    }
                });
                acc(grads, self, *w, |gw| {
                    for r in 0..n {
                        let xr = &xt.data()[r * k..(r + 1) * k];
                        for j in 0..m {
                            axpy(g[r * m + j], xr, &mut gw[j * k..(j + 1) * k]);
                        }
                    }
                });
            }
            Op::AddBias(m, b) => {
                acc(grads, self, *m, |gm| axpy(1.0, g, gm));
                acc(grads, self, *b, |gb| {
                    let c = gb.len();
                    for (k, gv) in g.iter().enumerate() {
                        gb[k % c] += gv;
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(grads, self, p, |gp| axpy(1.0, &g[off..off + len], gp));
                    off += len;
                }
            }
            Op::Slice { src, start } => {
                let w = self.value(*src).row_len();
                acc(grads, self, *src, |gs| {
                    axpy(1.0, g, &mut gs[start * w..start * w + g.len()]);
                });
            }
            Op::Reshape(a) => acc(grads, self, *a, |ga| axpy(1.0, g, ga)),
            Op::Broadcast(s) => acc(grads, self, *s, |gs| gs[0] += g.iter().sum::<f64>()),
            Op::Sum(a) => acc(grads, self, *a, |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::Tanh(a) => acc(grads, self, *a, |ga| {
                for k in 0..g.len() {
                    ga[k] += g[k] * (1.0 - out[k] * out[k]);
                }
            }),
            Op::Sigmoid(a) => acc(grads, self, *a, |ga| {
                for k in 0..g.len() {
                    ga[k] += g[k] * out[k] * (1.0 - out[k]);
                }
            }),
            Op::Softmax(a) => {
                let s = dot(g, out);
                acc(grads, self, *a, |ga| {
                    for k in 0..g.len() {
                        ga[k] += out[k] * (g[k] - s);
                    }
                });
            }
            Op::SquaredNorm(a) => {
                let av = self.value(*a).data();
                acc(grads, self, *a, |ga| axpy(2.0 * g[0], av, ga));
            }
            Op::Scale(a, k) => acc(grads, self, *a, |ga| axpy(*k, g, ga)),
            Op::AddConst(a) => acc(grads, self, *a, |ga| axpy(1.0, g, ga)),
            Op::Normalize(a) => {
                let s: f64 = self.value(*a).data().iter().sum();
                // d(a_i / S)/da_j = δ_ij / S - a_i / S²  and  a_i / S = out_i
                let inner = dot(g, out);
                acc(grads, self, *a, |ga| {
                    for k in 0..g.len() {
                        ga[k] += (g[k] - inner) / s;
                    }
                });
            }
            Op::ShiftRight(a) => acc(grads, self, *a, |ga| {
                let n = ga.len();
                axpy(1.0, &g[1..], &mut ga[..n - 1]);
            }),
            Op::Conv1d(x, kernel) => {
                let (xt, kt) = (self.value(*x), self.value(*kernel));
                let (len, cin) = (xt.dims()[0], xt.dims()[1]);
                let (cout, width) = (kt.dims()[0], kt.dims()[2]);
                let pad = width / 2;
                let (xd, kd) = (xt.data(), kt.data());
                let taps = |l: usize, j: usize| -> Option<usize> {
                    let src = l as isize + j as isize - pad as isize;
                    (src >= 0 && src < len as isize).then_some(src as usize)
                };
                acc(grads, self, *x, |gx| {
                    for l in 0..len {
                        for j in 0..width {
                            let Some(src) = taps(l, j) else { continue };
                            for o in 0..cout {
                                let go = g[l * cout + o];
                                if go == 0.0 {
                                    continue;
                                }
                                for c in 0..cin {
                                    gx[src * cin + c] += go * kd[(o * cin + c) * width + j];
                                }
                            }
                        }
                    }
                });
                acc(grads, self, *kernel, |gk| {
                    for l in 0..len {
                        for j in 0..width {
                            let Some(src) = taps(l, j) else { continue };
                            for o in 0..cout {
                                let go = g[l * cout + o];
                                for c in 0..cin {
                                    gk[(o * cin + c) * width + j] += go * xd[src * cin + c];
                                }
                            }
                        }
                    }
                });
            }
        }
    }

    /// Gradients of a scalar `loss` with respect to every parameter in
    /// `params`. Parameters the graph never bound get zero tensors.
    pub fn gradients(&self, loss: NodeId, params: &ParamSet) -> Result<BTreeMap<String, Tensor>> {
        let grads = self.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, t) in params.iter() {
            let g = self
                .bound
                .get(name)
                .and_then(|&id| grads.get(id))
                .map(|g| Tensor::from_raw(t.dims().to_vec(), g.to_vec()))
                .unwrap_or_else(|| Tensor::zeros(t.dims()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], graph: &Graph, id: NodeId, f: impl FnOnce(&mut [f64])) {
    let slot = &mut grads[id.0];
    let g = slot.get_or_insert_with(|| vec![0.0; graph.value(id).len()]);
    f(g);
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(k: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += k * xv;
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn kind_name(k: OpKind) -> &'static str {
    match k {
        OpKind::Input => "input",
        OpKind::Add => "add",
        OpKind::Sub => "sub",
        OpKind::Mul => "mul",
        OpKind::MatVec => "matvec",
        OpKind::VecMat => "vecmat",
        OpKind::MatMulNt => "matmul_nt",
        OpKind::AddBias => "add_bias",
        OpKind::Concat => "concat",
        OpKind::Slice => "slice",
        OpKind::Reshape => "reshape",
        OpKind::Broadcast => "broadcast",
        OpKind::Sum => "sum",
        OpKind::Tanh => "tanh",
        OpKind::Sigmoid => "sigmoid",
        OpKind::Softmax => "softmax",
        OpKind::SquaredNorm => "squared_norm",
        OpKind::Scale => "scale",
        OpKind::AddConst => "add_const",
        OpKind::Normalize => "normalize",
        OpKind::ShiftRight => "shift_right",
        OpKind::Conv1d => "conv1d",
    }
}
