//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! Every forward operation appends one node holding its output value and the
//! ids of its inputs. `backward` replays the tape in reverse, accumulating
//! vector-Jacobian products. A tape lives for one forward pass; parameters
//! are plain [`Tensor`]s outside the tape and re-enter as leaves each pass.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    MatVec { w: NodeId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Affine { x: NodeId, mul: f64 },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Relu { x: NodeId },
    Exp { x: NodeId },
    LnFloor { x: NodeId, floor: f64 },
    Powf { x: NodeId, p: f64 },
    Softmax { x: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
    RowSum { x: NodeId },
    Concat { parts: Vec<NodeId> },
    StackRows { rows: Vec<NodeId> },
    Row { x: NodeId, index: usize },
    Pick { x: NodeId, index: usize },
    AddDiag { x: NodeId },
    ScaleRowsCols { m: NodeId, s: NodeId },
    SymmetricFromEntries { n: usize, entries: Vec<(usize, usize, NodeId)> },
    AngularWeight { u: NodeId, v: NodeId, factor: f64 },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::MatVec { .. } => "matvec",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Affine { .. } => "affine",
        Op::Tanh { .. } => "tanh",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Relu { .. } => "relu",
        Op::Exp { .. } => "exp",
        Op::LnFloor { .. } => "ln",
        Op::Powf { .. } => "powf",
        Op::Softmax { .. } => "softmax",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::RowSum { .. } => "row_sum",
        Op::Concat { .. } => "concat",
        Op::StackRows { .. } => "stack_rows",
        Op::Row { .. } => "row",
        Op::Pick { .. } => "pick",
        Op::AddDiag { .. } => "add_diag",
        Op::ScaleRowsCols { .. } => "scale_rows_cols",
        Op::SymmetricFromEntries { .. } => "symmetric_from_entries",
        Op::AngularWeight { .. } => "angular_weight",
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradient of a scalar loss with respect to tape nodes.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, if any reached it (None for non-grad nodes and
    /// nodes outside the loss's ancestry).
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// Recording tape for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Angular similarity in [0, 1]: `1 - arccos(cos(u, v)) / pi`.
///
/// The cosine is clamped to [-1, 1] against floating-point drift; a pair
/// with a zero-norm member is assigned cosine 0 (weight 0.5).
pub(crate) fn angular_similarity_kernel(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let cos = if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        (dot / (nu * nv)).clamp(-1.0, 1.0)
    };
    1.0 - cos.acos() / std::f64::consts::PI
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor as a leaf. Its `requires_grad` flag decides whether
    /// `backward` will produce a gradient for it.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t.clone(),
            requires_grad: t.requires_grad(),
        });
        id
    }

    /// Constant scalar leaf (never differentiated).
    pub fn scalar_const(&mut self, x: f64) -> Result<NodeId> {
        Ok(self.leaf(&Tensor::scalar(x)?))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn rg1(&self, a: NodeId) -> bool {
        self.nodes[a.0].requires_grad
    }

    fn rg2(&self, a: NodeId, b: NodeId) -> bool {
        self.rg1(a) || self.rg1(b)
    }

    fn push(
        &mut self,
        op: Op,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<NodeId> {
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { op: op_name(&op) });
        }
        let value = Tensor::new(shape, data)?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(id)
    }

    // -- linear algebra ---------------------------------------------------

    /// Matrix product `[m x k] * [k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let (da, db) = (va.data(), vb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                for j in 0..n {
                    out[i * n + j] += aip * db[p * n + j];
                }
            }
        }
        let rg = self.rg2(a, b);
        self.push(Op::MatMul { a, b }, vec![m, n], out, rg)
    }

    /// Matrix-vector product `[m x k] * [k] -> [m]`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (vw, vx) = (self.value(w), self.value(x));
        if vw.rank() != 2 || vx.rank() != 1 || vw.shape()[1] != vx.shape()[0] {
            return Err(Error::shape(
                "matvec",
                format!("{:?} x {:?}", vw.shape(), vx.shape()),
            ));
        }
        let (m, k) = (vw.shape()[0], vw.shape()[1]);
        let (dw, dx) = (vw.data(), vx.data());
        let out: Vec<f64> = (0..m)
            .map(|i| (0..k).map(|p| dw[i * k + p] * dx[p]).sum())
            .collect();
        let rg = self.rg2(w, x);
        self.push(Op::MatVec { w, x }, vec![m], out, rg)
    }

    // -- elementwise ------------------------------------------------------

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data: Vec<f64> = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().to_vec();
        let rg = self.rg2(a, b);
        self.push(op, shape, data, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn unary(
        &mut self,
        x: NodeId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let vx = self.value(x);
        let data: Vec<f64> = vx.data().iter().map(|&v| f(v)).collect();
        let shape = vx.shape().to_vec();
        let rg = self.rg1(x);
        self.push(op, shape, data, rg)
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> Result<NodeId> {
        self.unary(x, |v| mul * v + add, Op::Affine { x, mul })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, f64::exp, Op::Exp { x })
    }

    /// Elementwise `ln(max(x, floor))`; the floor keeps log-losses finite.
    pub fn ln_floor(&mut self, x: NodeId, floor: f64) -> Result<NodeId> {
        self.unary(x, |v| v.max(floor).ln(), Op::LnFloor { x, floor })
    }

    /// Elementwise `x^p` (positive inputs; NaN from a domain violation is a
    /// numeric failure).
    pub fn powf(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        self.unary(x, |v| v.powf(p), Op::Powf { x, p })
    }

    /// Numerically stable softmax over a vector.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 1 {
            return Err(Error::shape("softmax", format!("{:?}", vx.shape())));
        }
        let data = softmax_slice(vx.data());
        let shape = vx.shape().to_vec();
        let rg = self.rg1(x);
        self.push(Op::Softmax { x }, shape, data, rg)
    }

    // -- reductions and structure ------------------------------------------

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg1(x);
        self.push(Op::Sum { x }, vec![1], vec![s], rg)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let m = vx.data().iter().sum::<f64>() / vx.numel() as f64;
        let rg = self.rg1(x);
        self.push(Op::Mean { x }, vec![1], vec![m], rg)
    }

    /// Row sums of a matrix: `[r x c] -> [r]`.
    pub fn row_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(Error::shape("row_sum", format!("{:?}", vx.shape())));
        }
        let r = vx.shape()[0];
        let data: Vec<f64> = (0..r).map(|i| vx.row(i).iter().sum()).collect();
        let rg = self.rg1(x);
        self.push(Op::RowSum { x }, vec![r], data, rg)
    }

    /// Concatenate vectors along axis 0.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat: no inputs"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(Error::shape("concat", format!("{:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        let n = data.len();
        let rg = parts.iter().any(|&p| self.rg1(p));
        self.push(Op::Concat { parts: parts.to_vec() }, vec![n], data, rg)
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::invalid("stack_rows: no inputs"));
        }
        let d = self.value(rows[0]).numel();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.numel() != d {
                return Err(Error::shape("stack_rows", format!("{:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        let rg = rows.iter().any(|&r| self.rg1(r));
        self.push(Op::StackRows { rows: rows.to_vec() }, vec![rows.len(), d], data, rg)
    }

    /// Extract one row of a matrix as a vector.
    pub fn row(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 || index >= vx.shape()[0] {
            return Err(Error::shape(
                "row",
                format!("row {index} of {:?}", vx.shape()),
            ));
        }
        let data = vx.row(index).to_vec();
        let c = vx.shape()[1];
        let rg = self.rg1(x);
        self.push(Op::Row { x, index }, vec![c], data, rg)
    }

    /// Extract one element of a vector as a scalar.
    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 1 || index >= vx.numel() {
            return Err(Error::shape(
                "pick",
                format!("element {index} of {:?}", vx.shape()),
            ));
        }
        let v = vx.data()[index];
        let rg = self.rg1(x);
        self.push(Op::Pick { x, index }, vec![1], vec![v], rg)
    }

    /// `x + c * I` for a square matrix.
    pub fn add_diag(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 || vx.shape()[0] != vx.shape()[1] {
            return Err(Error::shape("add_diag", format!("{:?}", vx.shape())));
        }
        let n = vx.shape()[0];
        let mut data = vx.data().to_vec();
        for i in 0..n {
            data[i * n + i] += c;
        }
        let rg = self.rg1(x);
        self.push(Op::AddDiag { x }, vec![n, n], data, rg)
    }

    /// Symmetric row/column scaling: `out[i][j] = m[i][j] * s[i] * s[j]`.
    pub fn scale_rows_cols(&mut self, m: NodeId, s: NodeId) -> Result<NodeId> {
        let (vm, vs) = (self.value(m), self.value(s));
        if vm.rank() != 2 || vm.shape()[0] != vm.shape()[1] || vs.rank() != 1
            || vs.numel() != vm.shape()[0]
        {
            return Err(Error::shape(
                "scale_rows_cols",
                format!("{:?} with {:?}", vm.shape(), vs.shape()),
            ));
        }
        let n = vs.numel();
        let (dm, ds) = (vm.data(), vs.data());
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = dm[i * n + j] * ds[i] * ds[j];
            }
        }
        let rg = self.rg2(m, s);
        self.push(Op::ScaleRowsCols { m, s }, vec![n, n], data, rg)
    }

    /// Assemble a symmetric `[n x n]` matrix with zero diagonal from scalar
    /// entries, each placed at `(i, j)` and `(j, i)`.
    pub fn symmetric_from_entries(
        &mut self,
        n: usize,
        entries: &[(usize, usize, NodeId)],
    ) -> Result<NodeId> {
        let mut data = vec![0.0; n * n];
        let mut rg = false;
        for &(i, j, id) in entries {
            if i >= n || j >= n || i == j {
                return Err(Error::invalid(format!(
                    "symmetric_from_entries: bad position ({i}, {j}) for n={n}"
                )));
            }
            let v = self.value(id);
            if !v.is_scalar() {
                return Err(Error::shape(
                    "symmetric_from_entries",
                    format!("entry ({i}, {j}) has shape {:?}", v.shape()),
                ));
            }
            let w = v.item();
            data[i * n + j] = w;
            data[j * n + i] = w;
            rg |= self.rg1(id);
        }
        self.push(
            Op::SymmetricFromEntries { n, entries: entries.to_vec() },
            vec![n, n],
            data,
            rg,
        )
    }

    /// Angular similarity between two vectors, scaled by `factor`
    /// (1 for same-modality edges, the cross-modal discount otherwise).
    pub fn angular_weight(&mut self, u: NodeId, v: NodeId, factor: f64) -> Result<NodeId> {
        let (vu, vv) = (self.value(u), self.value(v));
        if vu.rank() != 1 || vv.rank() != 1 || vu.numel() != vv.numel() {
            return Err(Error::shape(
                "angular_weight",
                format!("{:?} vs {:?}", vu.shape(), vv.shape()),
            ));
        }
        let w = factor * angular_similarity_kernel(vu.data(), vv.data());
        let rg = self.rg2(u, v);
        self.push(Op::AngularWeight { u, v, factor }, vec![1], vec![w], rg)
    }

    // -- reverse pass -------------------------------------------------------

    /// Gradient of a scalar loss with respect to every requires-grad node.
    ///
    /// Does not mutate the tape: replaying twice yields identical results.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::invalid("backward: unknown node id"))?;
        if !node.value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::invalid(
                "backward: loss is detached from every requires-grad leaf",
            ));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let node = &self.nodes[id];
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite { op: op_name(&node.op) });
            }
            self.propagate(node, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient shape matches node value")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, contrib: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => grads[id.0] = Some(contrib.to_vec()),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                let (da, db) = (va.data(), vb.data());
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                ga[i * k + p] += gij * db[p * n + j];
                            }
                        }
                    }
                    self.accumulate(grads, *a, &ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = da[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    self.accumulate(grads, *b, &gb);
                }
            }
            Op::MatVec { w, x } => {
                let (vw, vx) = (self.value(*w), self.value(*x));
                let (m, k) = (vw.shape()[0], vw.shape()[1]);
                let (dw, dx) = (vw.data(), vx.data());
                if self.nodes[w.0].requires_grad {
                    let mut gw = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            gw[i * k + p] = g[i] * dx[p];
                        }
                    }
                    self.accumulate(grads, *w, &gw);
                }
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![0.0; k];
                    for i in 0..m {
                        for p in 0..k {
                            gx[p] += dw[i * k + p] * g[i];
                        }
                    }
                    self.accumulate(grads, *x, &gx);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate(grads, *b, &neg);
            }
            Op::Mul { a, b } => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let ga: Vec<f64> = g.iter().zip(db).map(|(gi, y)| gi * y).collect();
                let gb: Vec<f64> = g.iter().zip(da).map(|(gi, x)| gi * x).collect();
                self.accumulate(grads, *a, &ga);
                self.accumulate(grads, *b, &gb);
            }
            Op::Affine { x, mul } => {
                let gx: Vec<f64> = g.iter().map(|gi| gi * mul).collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Tanh { x } => {
                let y = node.value.data();
                let gx: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                let gx: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Relu { x } => {
                let dx = self.value(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(dx)
                    .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Exp { x } => {
                let y = node.value.data();
                let gx: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * yi).collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::LnFloor { x, floor } => {
                let dx = self.value(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(dx)
                    .map(|(gi, &xi)| if xi > *floor { gi / xi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Powf { x, p } => {
                let dx = self.value(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(dx)
                    .map(|(gi, &xi)| gi * p * xi.powf(p - 1.0))
                    .collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                let gx: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| yi * (gi - dot)).collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, &vec![g[0]; n]);
            }
            Op::Mean { x } => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, &vec![g[0] / n as f64; n]);
            }
            Op::RowSum { x } => {
                let vx = self.value(*x);
                let (r, c) = (vx.shape()[0], vx.shape()[1]);
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[i];
                    }
                }
                self.accumulate(grads, *x, &gx);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.accumulate(grads, p, &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::StackRows { rows } => {
                let d = self.value(rows[0]).numel();
                for (i, &r) in rows.iter().enumerate() {
                    self.accumulate(grads, r, &g[i * d..(i + 1) * d]);
                }
            }
            Op::Row { x, index } => {
                let vx = self.value(*x);
                let (r, c) = (vx.shape()[0], vx.shape()[1]);
                let mut gx = vec![0.0; r * c];
                gx[index * c..(index + 1) * c].copy_from_slice(g);
                self.accumulate(grads, *x, &gx);
            }
            Op::Pick { x, index } => {
                let n = self.value(*x).numel();
                let mut gx = vec![0.0; n];
                gx[*index] = g[0];
                self.accumulate(grads, *x, &gx);
            }
            Op::AddDiag { x } => {
                self.accumulate(grads, *x, g);
            }
            Op::ScaleRowsCols { m, s } => {
                let (vm, vs) = (self.value(*m), self.value(*s));
                let n = vs.numel();
                let (dm, ds) = (vm.data(), vs.data());
                if self.nodes[m.0].requires_grad {
                    let mut gm = vec![0.0; n * n];
                    for i in 0..n {
                        for j in 0..n {
                            gm[i * n + j] = g[i * n + j] * ds[i] * ds[j];
                        }
                    }
                    self.accumulate(grads, *m, &gm);
                }
                if self.nodes[s.0].requires_grad {
                    let mut gs = vec![0.0; n];
                    for i in 0..n {
                        for j in 0..n {
                            gs[i] += g[i * n + j] * dm[i * n + j] * ds[j];
                            gs[i] += g[j * n + i] * dm[j * n + i] * ds[j];
                        }
                    }
                    self.accumulate(grads, *s, &gs);
                }
            }
            Op::SymmetricFromEntries { n, entries } => {
                for &(i, j, id) in entries {
                    let ge = g[i * n + j] + g[j * n + i];
                    self.accumulate(grads, id, &[ge]);
                }
            }
            Op::AngularWeight { u, v, factor } => {
                let (du, dv) = (self.value(*u).data(), self.value(*v).data());
                let dot: f64 = du.iter().zip(dv).map(|(a, b)| a * b).sum();
                let nu = du.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nv = dv.iter().map(|a| a * a).sum::<f64>().sqrt();
                if nu == 0.0 || nv == 0.0 {
                    return; // constant 0.5 * factor; zero gradient
                }
                let cos = dot / (nu * nv);
                if cos.abs() >= 1.0 {
                    return; // clamped region; subgradient zero
                }
                // d w / d cos = factor / (pi * sqrt(1 - cos^2))
                let dw_dc = factor / (std::f64::consts::PI * (1.0 - cos * cos).sqrt());
                let scale = g[0] * dw_dc;
                let gu: Vec<f64> = du
                    .iter()
                    .zip(dv)
                    .map(|(&ui, &vi)| scale * (vi / (nu * nv) - cos * ui / (nu * nu)))
                    .collect();
                let gv: Vec<f64> = du
                    .iter()
                    .zip(dv)
                    .map(|(&ui, &vi)| scale * (ui / (nu * nv) - cos * vi / (nv * nv)))
                    .collect();
                self.accumulate(grads, *u, &gu);
                self.accumulate(grads, *v, &gv);
            }
        }
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

/// Stable softmax of a slice (max subtraction before exponentiation).
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(&t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(&t(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(i2, b).unwrap();
        assert_eq!(tape.value(c).data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn matmul_hand_checked() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(&t(vec![2, 1], vec![1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a_data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b_data: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // independent triple-nested-loop oracle
        let mut expect = vec![0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                for p in 0..4 {
                    expect[i * 2 + j] += a_data[i * 4 + p] * b_data[p * 2 + j];
                }
            }
        }
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![3, 4], a_data));
        let b = tape.leaf(&t(vec![4, 2], b_data));
        let c = tape.matmul(a, b).unwrap();
        for (got, want) in tape.value(c).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![2, 3], vec![0.0; 6]));
        let b = tape.leaf(&t(vec![2, 2], vec![0.0; 4]));
        assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![3], vec![4.2, 4.2, 4.2]));
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_analytic() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![0.0, 2.0_f64.ln()]));
        let y = tape.softmax(x).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_no_overflow_on_large_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![1000.0, 1000.0]));
        let y = tape.softmax(x).unwrap();
        let d = tape.value(y).data();
        assert_eq!(d, &[0.5, 0.5]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![5], vec![-3.0, 0.1, 7.7, 2.0, -0.5]));
        let y = tape.softmax(x).unwrap();
        let s: f64 = tape.value(y).data().iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
        assert!(tape.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn elementwise_analytic_points() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![1], vec![0.0]));
        let th = tape.tanh(x).unwrap();
        let sg = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(th).item(), 0.0);
        assert_eq!(tape.value(sg).item(), 0.5);
    }

    #[test]
    fn concat_vectors() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![2], vec![1.0, 2.0]));
        let b = tape.leaf(&t(vec![1], vec![3.0]));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn backward_square() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0).unwrap().with_grad());
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_cross_entropy_softmax_identity() {
        // loss = -ln(softmax(z)[y]) has gradient p - onehot(y)
        let mut tape = Tape::new();
        let z = tape.leaf(&t(vec![3], vec![0.3, -1.2, 2.0]).with_grad());
        let p = tape.softmax(z).unwrap();
        let py = tape.pick(p, 1).unwrap();
        let lp = tape.ln_floor(py, 1e-12).unwrap();
        let loss = tape.affine(lp, -1.0, 0.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gz = grads.get(z).unwrap().data().to_vec();
        let pv = tape.value(p).data();
        let expect = [pv[0], pv[1] - 1.0, pv[2]];
        for (g, e) in gz.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![3], vec![0.5, -0.25, 2.0]).with_grad());
        let h = tape.tanh(x).unwrap();
        let s = tape.softmax(h).unwrap();
        let loss = tape.mean(s).unwrap();
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        let a = g1.get(x).unwrap().data();
        let b = g2.get(x).unwrap().data();
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![1.0, 2.0]).with_grad());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_rejects_detached_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![1], vec![2.0]));
        let y = tape.mul(x, x).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn nan_policing_names_the_operation() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![1], vec![1e9]));
        match tape.exp(x) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "exp"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn angular_kernel_analytic_cases() {
        // cosine of (3,4) with (6,8) is exactly 1.0 in floating point
        let par = angular_similarity_kernel(&[3.0, 4.0], &[6.0, 8.0]);
        let ort = angular_similarity_kernel(&[1.0, 0.0], &[0.0, 3.0]);
        let anti = angular_similarity_kernel(&[1.0, 0.0], &[-2.0, 0.0]);
        let zero = angular_similarity_kernel(&[0.0, 0.0], &[1.0, 2.0]);
        assert!((par - 1.0).abs() <= 1e-12);
        assert!((ort - 0.5).abs() <= 1e-12);
        assert!(anti.abs() <= 1e-12);
        assert!((zero - 0.5).abs() <= 1e-12);
        // arccos loses precision near cosine 1; a nearly-parallel pair whose
        // cosine rounds just below 1 still lands within acos noise of 1.
        let near = angular_similarity_kernel(&[1.0, 1.0], &[2.0, 2.0]);
        assert!((near - 1.0).abs() <= 1e-7);
    }
}
