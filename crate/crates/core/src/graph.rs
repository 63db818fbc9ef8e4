//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes together with
//! the forward value. [`Graph::backward`] then walks the record in reverse
//! and accumulates vector-Jacobian products into the nodes that require a
//! gradient. Leaves created with [`Graph::leaf`] are the parameters; those
//! created with [`Graph::constant`] never receive a gradient.
//!
//! Matrix-valued nodes are 2-D `[rows, cols]`. Row vectors used for
//! broadcasting may be 1-D. Scalar results (loss values) have shape `[1]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    ScaleBy(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MeanRows(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    Log(NodeId),
    Sinh(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, T),
    GatherRows(NodeId, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation record for one forward pass. Single-writer; build a fresh
/// graph per training step.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like `like` if nothing reached it.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor<T>) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn scalar_shape_ok<T: Scalar>(t: &Tensor<T>) -> bool {
    t.numel() == 1
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Differentiable leaf (a parameter or an optimized input).
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> T {
        self.nodes[id.0].value.data()[0]
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "graph matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let out = va.matmul(vb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn row_check(&self, op: &'static str, a: NodeId, row: NodeId) -> Result<()> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.numel() != va.cols() || vr.rows() != 1 {
            return Err(Error::Dimension {
                op,
                lhs: va.shape().to_vec(),
                rhs: vr.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_check("add_row", a, row)?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of `a` elementwise by a row vector.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_check("mul_row", a, row)?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&r) {
                *o *= b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let out = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> NodeId {
        let out = self.value(a).map(|v| v + c);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// Multiplies `a` by the single element of node `s`.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if !scalar_shape_ok(self.value(s)) {
            return Err(Error::Dimension {
                op: "scale_by",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(s).shape().to_vec(),
            });
        }
        let c = self.scalar_value(s);
        let out = self.value(a).scale(c);
        let rg = self.rg(&[a, s]);
        Ok(self.push(out, Op::ScaleBy(a, s), rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / T::c(v.numel() as f64));
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    /// Column means of a matrix, as a length-`cols` vector.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mean_rows();
        let rg = self.rg(&[a]);
        self.push(out, Op::MeanRows(a), rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v * v);
        let rg = self.rg(&[a]);
        self.push(out, Op::Square(a), rg)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v.sqrt());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sqrt(a), rg)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| T::one() / v);
        let rg = self.rg(&[a]);
        self.push(out, Op::Recip(a), rg)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v.ln());
        let rg = self.rg(&[a]);
        self.push(out, Op::Log(a), rg)
    }

    pub fn sinh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v.sinh());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sinh(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v.tanh());
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: T) -> NodeId {
        // Division by the reciprocal slope keeps the closed-form inverse exact
        // for slopes like 0.2 whose reciprocal is representable.
        let inv = T::one() / slope;
        let out = self
            .value(a)
            .map(|v| if v >= T::zero() { v } else { v / inv });
        let rg = self.rg(&[a]);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    /// Selects rows of `a` by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.dims(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!(
                "row index {bad} out of range for {rows} rows"
            )));
        }
        if indices.is_empty() {
            return Err(Error::contract("gather_rows needs at least one index"));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::matrix(indices.len(), cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec()), rg))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += *d;
                }
            }
            slot @ None => {
                let shape = self.nodes[id.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, delta.into_data()).expect("gradient shape"));
            }
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.matmul(&vb.transpose())?);
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, va.transpose().matmul(g)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y)?);
                self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y)?);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let summed = sum_rows(g);
                self.accumulate(grads, *row, summed);
            }
            Op::MulRow(a, row) => {
                let va = self.value(*a);
                let r = self.value(*row).data();
                let mut da = g.clone();
                for i in 0..da.rows() {
                    for (d, &rv) in da.row_mut(i).iter_mut().zip(r) {
                        *d *= rv;
                    }
                }
                self.accumulate(grads, *a, da);
                let prod = g.zip_map(va, |x, y| x * y)?;
                self.accumulate(grads, *row, sum_rows(&prod));
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::ScaleBy(a, s) => {
                let c = self.scalar_value(*s);
                self.accumulate(grads, *a, g.scale(c));
                let ds = g.dot(self.value(*a));
                self.accumulate(grads, *s, Tensor::scalar(ds));
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(va.shape(), g.data()[0]));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let v = g.data()[0] / T::c(va.numel() as f64);
                self.accumulate(grads, *a, Tensor::full(va.shape(), v));
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let (m, n) = (va.rows(), va.cols());
                let inv = T::one() / T::c(m as f64);
                let gd = g.data();
                let da = Tensor::from_fn(va.shape(), |k| gd[k % n] * inv);
                self.accumulate(grads, *a, da);
            }
            Op::Square(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |d, x| T::c(2.0) * x * d)?);
            }
            Op::Sqrt(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |d, y| d * T::c(0.5) / y)?);
            }
            Op::Recip(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |d, y| -d * y * y)?);
            }
            Op::Log(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |d, x| d / x)?);
            }
            Op::Sinh(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(va, |d, x| d * x.cosh())?);
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |d, y| d * (T::one() - y * y))?);
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                let s = *slope;
                self.accumulate(
                    grads,
                    *a,
                    g.zip_map(va, |d, x| if x >= T::zero() { d } else { d * s })?,
                );
            }
            Op::GatherRows(a, indices) => {
                let va = self.value(*a);
                let mut da = Tensor::zeros(va.shape());
                for (k, &i) in indices.iter().enumerate() {
                    for (d, &gv) in da.row_mut(i).iter_mut().zip(g.row(k)) {
                        *d += gv;
                    }
                }
                self.accumulate(grads, *a, da);
            }
        }
        Ok(())
    }
}

fn sum_rows<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let n = g.cols();
    let mut out = vec![T::zero(); n];
    for i in 0..g.rows() {
        for (o, &v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::vector(out)
}
