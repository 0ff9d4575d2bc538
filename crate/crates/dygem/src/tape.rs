//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! A forward pass appends nodes (value + originating op) to a [`Tape`];
//! [`Tape::backward`] walks the tape once in reverse, which is reverse
//! topological order by construction, and accumulates vector-Jacobian
//! products into every node that can reach a gradient-requiring leaf.
//!
//! The op set is deliberately small: dense 2-D matmul, elementwise
//! arithmetic, a fixed activation menu, row/column broadcasts against
//! vectors, axis reductions, row gather/concat, and three column
//! reshuffles used by the selective-scan state layout. Anything larger
//! is composed from these.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{matmul_raw, transpose_raw, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Elementwise activation functions with registered derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Elu,
    Relu,
    Exp,
    Sigmoid,
    Silu,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Exp => x.exp(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Silu => x * sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Exp => x.exp(),
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            "exp" => Ok(Activation::Exp),
            "sigmoid" => Ok(Activation::Sigmoid),
            "silu" => Ok(Activation::Silu),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::Config(format!("unknown activation kind `{other}`"))),
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

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    Activate(TensorId, Activation),
    Ln(TensorId),
    Powf(TensorId, f64),
    AddRowBroadcast(TensorId, TensorId),
    MulRowBroadcast(TensorId, TensorId),
    AddColBroadcast(TensorId, TensorId),
    MulColBroadcast(TensorId, TensorId),
    ReduceSum(TensorId, usize),
    ReduceMean(TensorId, usize),
    SumAll(TensorId),
    GatherRows(TensorId, Vec<usize>),
    ConcatRows(Vec<TensorId>),
    RepeatColsInterleave(TensorId, usize),
    TileCols(TensorId, usize),
    SumColGroups(TensorId, usize),
    MulScalarTensor(TensorId, TensorId),
    Reshape(TensorId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    mounts: Vec<(usize, TensorId)>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`TensorId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn or_zeros(&self, id: TensorId, shape: &[usize]) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Mount a leaf; gradient participation follows `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> TensorId {
        let rg = t.requires_grad;
        self.push(t.clone(), Op::Leaf, rg)
    }

    /// Mount a constant leaf (never receives gradient).
    pub fn constant(&mut self, mut t: Tensor) -> TensorId {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    /// Record that `param_index` in some parameter store is bound to `id`.
    pub(crate) fn note_mount(&mut self, param_index: usize, id: TensorId) {
        self.mounts.push((param_index, id));
    }

    pub(crate) fn mount_of(&self, param_index: usize) -> Option<TensorId> {
        self.mounts
            .iter()
            .find(|(p, _)| *p == param_index)
            .map(|(_, id)| *id)
    }

    pub(crate) fn mounts(&self) -> &[(usize, TensorId)] {
        &self.mounts
    }

    // ── Primitive ops ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Dimension(format!(
                "matmul shapes {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let n = bv.shape()[1];
        let data = matmul_raw(av.data(), bv.data(), m, k, n);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Tensor::from_vec(vec![m, n], data)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::Dimension(format!(
                "transpose expects rank 2, got {:?}",
                xv.shape()
            )));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let data = transpose_raw(xv.data(), r, c);
        let rg = self.needs_grad(x);
        Ok(self.push(Tensor::from_vec(vec![c, r], data)?, Op::Transpose(x), rg))
    }

    fn zip_same_shape(
        &mut self,
        a: TensorId,
        b: TensorId,
        op_name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension(format!(
                "{op_name} shapes {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let shape = av.shape().to_vec();
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Tensor::from_vec(shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn map_unary(&mut self, x: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let rg = self.needs_grad(x);
        self.push(
            Tensor::from_vec(shape, data).expect("unary preserves numel"),
            op,
            rg,
        )
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        self.map_unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f64) -> TensorId {
        self.map_unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn activation(&mut self, x: TensorId, kind: Activation) -> TensorId {
        self.map_unary(x, |v| kind.apply(v), Op::Activate(x, kind))
    }

    pub fn ln(&mut self, x: TensorId) -> TensorId {
        self.map_unary(x, |v| v.ln(), Op::Ln(x))
    }

    pub fn powf(&mut self, x: TensorId, p: f64) -> TensorId {
        self.map_unary(x, |v| v.powf(p), Op::Powf(x, p))
    }

    fn row_broadcast(
        &mut self,
        x: TensorId,
        v: TensorId,
        op_name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let (xv, vv) = (self.value(x), self.value(v));
        let (rows, cols) = xv.dims2()?;
        if xv.rank() != 2 || vv.rank() != 1 || vv.numel() != cols {
            return Err(Error::Dimension(format!(
                "{op_name} shapes {:?} with vector {:?}",
                xv.shape(),
                vv.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(xv.at(i, j), vv.data()[j]));
            }
        }
        let rg = self.needs_grad(x) || self.needs_grad(v);
        Ok(self.push(Tensor::from_vec(vec![rows, cols], data)?, op, rg))
    }

    /// out[i][j] = x[i][j] + v[j]
    pub fn add_row_broadcast(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        self.row_broadcast(x, v, "add_row_broadcast", |a, b| a + b, Op::AddRowBroadcast(x, v))
    }

    /// out[i][j] = x[i][j] * v[j]
    pub fn mul_row_broadcast(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        self.row_broadcast(x, v, "mul_row_broadcast", |a, b| a * b, Op::MulRowBroadcast(x, v))
    }

    fn col_broadcast(
        &mut self,
        x: TensorId,
        v: TensorId,
        op_name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let (xv, vv) = (self.value(x), self.value(v));
        let (rows, cols) = xv.dims2()?;
        if xv.rank() != 2 || vv.rank() != 1 || vv.numel() != rows {
            return Err(Error::Dimension(format!(
                "{op_name} shapes {:?} with vector {:?}",
                xv.shape(),
                vv.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let s = vv.data()[i];
            for j in 0..cols {
                data.push(f(xv.at(i, j), s));
            }
        }
        let rg = self.needs_grad(x) || self.needs_grad(v);
        Ok(self.push(Tensor::from_vec(vec![rows, cols], data)?, op, rg))
    }

    /// out[i][j] = x[i][j] + v[i]
    pub fn add_col_broadcast(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        self.col_broadcast(x, v, "add_col_broadcast", |a, b| a + b, Op::AddColBroadcast(x, v))
    }

    /// out[i][j] = x[i][j] * v[i]
    pub fn mul_col_broadcast(&mut self, x: TensorId, v: TensorId) -> Result<TensorId> {
        self.col_broadcast(x, v, "mul_col_broadcast", |a, b| a * b, Op::MulColBroadcast(x, v))
    }

    fn reduce(&mut self, x: TensorId, axis: usize, mean: bool) -> Result<TensorId> {
        let xv = self.value(x);
        if axis >= xv.rank().max(1) {
            return Err(Error::Dimension(format!(
                "axis {axis} out of range for shape {:?}",
                xv.shape()
            )));
        }
        let value = match xv.rank() {
            1 => {
                let mut s = 0.0;
                for &v in xv.data() {
                    s += v;
                }
                if mean {
                    s /= xv.numel() as f64;
                }
                Tensor::scalar(s)
            }
            2 => {
                let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
                if axis == 0 {
                    let mut out = vec![0.0; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            out[j] += xv.at(i, j);
                        }
                    }
                    if mean {
                        for v in &mut out {
                            *v /= rows as f64;
                        }
                    }
                    Tensor::vector(out)
                } else {
                    let mut out = vec![0.0; rows];
                    for i in 0..rows {
                        let mut s = 0.0;
                        for j in 0..cols {
                            s += xv.at(i, j);
                        }
                        out[i] = if mean { s / cols as f64 } else { s };
                    }
                    Tensor::vector(out)
                }
            }
            r => {
                return Err(Error::Dimension(format!(
                    "reduce expects rank <= 2, got {r}"
                )))
            }
        };
        let rg = self.needs_grad(x);
        let op = if mean {
            Op::ReduceMean(x, axis)
        } else {
            Op::ReduceSum(x, axis)
        };
        Ok(self.push(value, op, rg))
    }

    /// Sum along `axis`; the reduced axis is removed.
    pub fn reduce_sum(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce(x, axis, false)
    }

    /// Arithmetic mean along `axis`; backward distributes uniformly.
    pub fn reduce_mean(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce(x, axis, true)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let xv = self.value(x);
        let mut s = 0.0;
        for &v in xv.data() {
            s += v;
        }
        let rg = self.needs_grad(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// out[i] = x[indices[i]] (rows); duplicate indices are allowed and
    /// their gradients accumulate.
    pub fn gather_rows(&mut self, x: TensorId, indices: &[usize]) -> Result<TensorId> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        if xv.rank() != 2 {
            return Err(Error::Dimension(format!(
                "gather_rows expects rank 2, got {:?}",
                xv.shape()
            )));
        }
        for &i in indices {
            if i >= rows {
                return Err(Error::Contract(format!(
                    "gather_rows index {i} out of {rows} rows"
                )));
            }
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&xv.data()[i * cols..(i + 1) * cols]);
        }
        let rg = self.needs_grad(x);
        Ok(self.push(
            Tensor::from_vec(vec![indices.len(), cols], data)?,
            Op::GatherRows(x, indices.to_vec()),
            rg,
        ))
    }

    /// Stack inputs along axis 0. Vectors count as single rows; all inputs
    /// must share the column extent.
    pub fn concat_rows(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(Error::Contract("concat_rows of zero tensors".into()));
        }
        let cols = self.value(inputs[0]).dims2()?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for &id in inputs {
            let v = self.value(id);
            let (r, c) = v.dims2()?;
            if c != cols {
                return Err(Error::Dimension(format!(
                    "concat_rows column mismatch: {cols} vs {c}"
                )));
            }
            rows += r;
            data.extend_from_slice(v.data());
            rg |= self.needs_grad(id);
        }
        Ok(self.push(
            Tensor::from_vec(vec![rows, cols], data)?,
            Op::ConcatRows(inputs.to_vec()),
            rg,
        ))
    }

    /// out[i][j*m + k] = x[i][j] for k in 0..m (each column repeated m times).
    pub fn repeat_cols_interleave(&mut self, x: TensorId, m: usize) -> Result<TensorId> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        let mut data = Vec::with_capacity(rows * cols * m);
        for i in 0..rows {
            for j in 0..cols {
                let v = xv.at(i, j);
                for _ in 0..m {
                    data.push(v);
                }
            }
        }
        let rg = self.needs_grad(x);
        Ok(self.push(
            Tensor::from_vec(vec![rows, cols * m], data)?,
            Op::RepeatColsInterleave(x, m),
            rg,
        ))
    }

    /// out[i][j*m + k] = x[i][k] for j in 0..times (whole row block tiled).
    pub fn tile_cols(&mut self, x: TensorId, times: usize) -> Result<TensorId> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        let mut data = Vec::with_capacity(rows * cols * times);
        for i in 0..rows {
            let row = &xv.data()[i * cols..(i + 1) * cols];
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let rg = self.needs_grad(x);
        Ok(self.push(
            Tensor::from_vec(vec![rows, cols * times], data)?,
            Op::TileCols(x, times),
            rg,
        ))
    }

    /// out[i][j] = sum over k in 0..m of x[i][j*m + k].
    pub fn sum_col_groups(&mut self, x: TensorId, m: usize) -> Result<TensorId> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        if m == 0 || cols % m != 0 {
            return Err(Error::Dimension(format!(
                "sum_col_groups: {cols} columns not divisible by group {m}"
            )));
        }
        let out_cols = cols / m;
        let mut data = Vec::with_capacity(rows * out_cols);
        for i in 0..rows {
            for j in 0..out_cols {
                let mut s = 0.0;
                for k in 0..m {
                    s += xv.at(i, j * m + k);
                }
                data.push(s);
            }
        }
        let rg = self.needs_grad(x);
        Ok(self.push(
            Tensor::from_vec(vec![rows, out_cols], data)?,
            Op::SumColGroups(x, m),
            rg,
        ))
    }

    /// Multiply every element of `x` by a one-element tensor `s`.
    pub fn mul_scalar_tensor(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        let sv = self.value(s);
        if sv.numel() != 1 {
            return Err(Error::Dimension(format!(
                "mul_scalar_tensor: scalar operand has shape {:?}",
                sv.shape()
            )));
        }
        let c = sv.data()[0];
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let data = xv.data().iter().map(|&v| v * c).collect();
        let rg = self.needs_grad(x) || self.needs_grad(s);
        Ok(self.push(
            Tensor::from_vec(shape, data)?,
            Op::MulScalarTensor(x, s),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let xv = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != xv.numel() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?}",
                xv.shape(),
                shape
            )));
        }
        let data = xv.data().to_vec();
        let rg = self.needs_grad(x);
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Reshape(x), rg))
    }

    // ── Common compositions ─────────────────────────────────────────

    /// x @ w + b (b broadcast over rows).
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let xw = self.matmul(x, w)?;
        self.add_row_broadcast(xw, b)
    }

    /// Inverted dropout; identity when not training or rate is zero.
    pub fn dropout(
        &mut self,
        x: TensorId,
        rate: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<TensorId> {
        if !training || rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate {rate} must be < 1")));
        }
        let keep = 1.0 - rate;
        let shape = self.value(x).shape().to_vec();
        let numel = self.value(x).numel();
        let mask: Vec<f64> = (0..numel)
            .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::from_vec(shape, mask)?);
        self.mul(x, m)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns per-node gradients for
    /// leaves; interior gradients are freed as soon as they are consumed.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::ones(loss_node.value.shape().to_vec()));

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue; // keep leaf gradients for the caller
            }
            let g = grads[idx].take().expect("checked above");
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: TensorId, contrib: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (gv, cv) in g.data_mut().iter_mut().zip(contrib.data()) {
                    *gv += cv;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.needs_grad(*a) {
                    let bt = transpose_raw(bv.data(), k, n);
                    let da = matmul_raw(g.data(), &bt, m, n, k);
                    self.accumulate(grads, *a, Tensor::from_vec(vec![m, k], da).unwrap());
                }
                if self.needs_grad(*b) {
                    let at = transpose_raw(av.data(), m, k);
                    let db = matmul_raw(&at, g.data(), k, m, n);
                    self.accumulate(grads, *b, Tensor::from_vec(vec![k, n], db).unwrap());
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let dx = transpose_raw(g.data(), r, c);
                self.accumulate(grads, *x, Tensor::from_vec(vec![c, r], dx).unwrap());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let neg = g.data().iter().map(|v| -v).collect();
                self.accumulate(
                    grads,
                    *b,
                    Tensor::from_vec(g.shape().to_vec(), neg).unwrap(),
                );
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    let bv = self.value(*b);
                    let da = g.data().iter().zip(bv.data()).map(|(&gv, &bvv)| gv * bvv);
                    self.accumulate(
                        grads,
                        *a,
                        Tensor::from_vec(g.shape().to_vec(), da.collect()).unwrap(),
                    );
                }
                if self.needs_grad(*b) {
                    let av = self.value(*a);
                    let db = g.data().iter().zip(av.data()).map(|(&gv, &avv)| gv * avv);
                    self.accumulate(
                        grads,
                        *b,
                        Tensor::from_vec(g.shape().to_vec(), db.collect()).unwrap(),
                    );
                }
            }
            Op::Div(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.needs_grad(*a) {
                    let da = g.data().iter().zip(bv.data()).map(|(&gv, &bvv)| gv / bvv);
                    self.accumulate(
                        grads,
                        *a,
                        Tensor::from_vec(g.shape().to_vec(), da.collect()).unwrap(),
                    );
                }
                if self.needs_grad(*b) {
                    let db: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(av.data().iter().zip(bv.data()))
                        .map(|(&gv, (&avv, &bvv))| -gv * avv / (bvv * bvv))
                        .collect();
                    self.accumulate(grads, *b, Tensor::from_vec(g.shape().to_vec(), db).unwrap());
                }
            }
            Op::Scale(x, c) => {
                let dx = g.data().iter().map(|&gv| gv * c).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), dx).unwrap());
            }
            Op::AddScalar(x) => {
                self.accumulate(grads, *x, g.clone());
            }
            Op::Activate(x, kind) => {
                let xv = self.value(*x);
                let dx = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &xvv)| gv * kind.derivative(xvv))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), dx).unwrap());
            }
            Op::Ln(x) => {
                let xv = self.value(*x);
                let dx = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &xvv)| gv / xvv)
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), dx).unwrap());
            }
            Op::Powf(x, p) => {
                let xv = self.value(*x);
                let dx = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &xvv)| gv * p * xvv.powf(p - 1.0))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), dx).unwrap());
            }
            Op::AddRowBroadcast(x, v) => {
                let (rows, cols) = (g.shape()[0], g.shape()[1]);
                self.accumulate(grads, *x, g.clone());
                if self.needs_grad(*v) {
                    let mut dv = vec![0.0; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            dv[j] += g.at(i, j);
                        }
                    }
                    self.accumulate(grads, *v, Tensor::vector(dv));
                }
            }
            Op::MulRowBroadcast(x, v) => {
                let (rows, cols) = (g.shape()[0], g.shape()[1]);
                let vv = self.value(*v);
                if self.needs_grad(*x) {
                    let mut dx = vec![0.0; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            dx[i * cols + j] = g.at(i, j) * vv.data()[j];
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(vec![rows, cols], dx).unwrap());
                }
                if self.needs_grad(*v) {
                    let xv = self.value(*x);
                    let mut dv = vec![0.0; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            dv[j] += g.at(i, j) * xv.at(i, j);
                        }
                    }
                    self.accumulate(grads, *v, Tensor::vector(dv));
                }
            }
            Op::AddColBroadcast(x, v) => {
                let (rows, cols) = (g.shape()[0], g.shape()[1]);
                self.accumulate(grads, *x, g.clone());
                if self.needs_grad(*v) {
                    let mut dv = vec![0.0; rows];
                    for i in 0..rows {
                        for j in 0..cols {
                            dv[i] += g.at(i, j);
                        }
                    }
                    self.accumulate(grads, *v, Tensor::vector(dv));
                }
            }
            Op::MulColBroadcast(x, v) => {
                let (rows, cols) = (g.shape()[0], g.shape()[1]);
                let vv = self.value(*v);
                if self.needs_grad(*x) {
                    let mut dx = vec![0.0; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            dx[i * cols + j] = g.at(i, j) * vv.data()[i];
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(vec![rows, cols], dx).unwrap());
                }
                if self.needs_grad(*v) {
                    let xv = self.value(*x);
                    let mut dv = vec![0.0; rows];
                    for i in 0..rows {
                        for j in 0..cols {
                            dv[i] += g.at(i, j) * xv.at(i, j);
                        }
                    }
                    self.accumulate(grads, *v, Tensor::vector(dv));
                }
            }
            Op::ReduceSum(x, axis) | Op::ReduceMean(x, axis) => {
                let mean = matches!(node.op, Op::ReduceMean(..));
                let xv = self.value(*x);
                let shape = xv.shape().to_vec();
                let mut dx = vec![0.0; xv.numel()];
                match shape.len() {
                    1 => {
                        let scale = if mean { 1.0 / shape[0] as f64 } else { 1.0 };
                        let gv = g.data()[0] * scale;
                        for v in &mut dx {
                            *v = gv;
                        }
                    }
                    2 => {
                        let (rows, cols) = (shape[0], shape[1]);
                        if *axis == 0 {
                            let scale = if mean { 1.0 / rows as f64 } else { 1.0 };
                            for i in 0..rows {
                                for j in 0..cols {
                                    dx[i * cols + j] = g.data()[j] * scale;
                                }
                            }
                        } else {
                            let scale = if mean { 1.0 / cols as f64 } else { 1.0 };
                            for i in 0..rows {
                                for j in 0..cols {
                                    dx[i * cols + j] = g.data()[i] * scale;
                                }
                            }
                        }
                    }
                    _ => unreachable!("reduce forward enforced rank <= 2"),
                }
                self.accumulate(grads, *x, Tensor::from_vec(shape, dx).unwrap());
            }
            Op::SumAll(x) => {
                let xv = self.value(*x);
                let gv = g.data()[0];
                let dx = vec![gv; xv.numel()];
                self.accumulate(
                    grads,
                    *x,
                    Tensor::from_vec(xv.shape().to_vec(), dx).unwrap(),
                );
            }
            Op::GatherRows(x, indices) => {
                let xv = self.value(*x);
                let cols = xv.shape()[1];
                let mut dx = vec![0.0; xv.numel()];
                for (out_row, &src_row) in indices.iter().enumerate() {
                    for j in 0..cols {
                        dx[src_row * cols + j] += g.at(out_row, j);
                    }
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor::from_vec(xv.shape().to_vec(), dx).unwrap(),
                );
            }
            Op::ConcatRows(inputs) => {
                let cols = g.shape()[1];
                let mut offset = 0;
                for &id in inputs {
                    let v = self.value(id);
                    let (r, _) = v.dims2().expect("validated in forward");
                    if self.needs_grad(id) {
                        let chunk = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        self.accumulate(
                            grads,
                            id,
                            Tensor::from_vec(v.shape().to_vec(), chunk).unwrap(),
                        );
                    }
                    offset += r;
                }
            }
            Op::RepeatColsInterleave(x, m) => {
                let xv = self.value(*x);
                let (rows, cols) = xv.dims2().unwrap();
                let mut dx = vec![0.0; xv.numel()];
                for i in 0..rows {
                    for j in 0..cols {
                        let mut s = 0.0;
                        for k in 0..*m {
                            s += g.at(i, j * m + k);
                        }
                        dx[i * cols + j] = s;
                    }
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor::from_vec(xv.shape().to_vec(), dx).unwrap(),
                );
            }
            Op::TileCols(x, times) => {
                let xv = self.value(*x);
                let (rows, cols) = xv.dims2().unwrap();
                let mut dx = vec![0.0; xv.numel()];
                for i in 0..rows {
                    for j in 0..*times {
                        for k in 0..cols {
                            dx[i * cols + k] += g.at(i, j * cols + k);
                        }
                    }
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor::from_vec(xv.shape().to_vec(), dx).unwrap(),
                );
            }
            Op::SumColGroups(x, m) => {
                let xv = self.value(*x);
                let (rows, cols) = xv.dims2().unwrap();
                let out_cols = cols / m;
                let mut dx = vec![0.0; xv.numel()];
                for i in 0..rows {
                    for j in 0..out_cols {
                        let gv = g.at(i, j);
                        for k in 0..*m {
                            dx[i * cols + j * m + k] = gv;
                        }
                    }
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor::from_vec(xv.shape().to_vec(), dx).unwrap(),
                );
            }
            Op::MulScalarTensor(x, s) => {
                let sv = self.value(*s).data()[0];
                if self.needs_grad(*x) {
                    let dx = g.data().iter().map(|&gv| gv * sv).collect();
                    self.accumulate(
                        grads,
                        *x,
                        Tensor::from_vec(g.shape().to_vec(), dx).unwrap(),
                    );
                }
                if self.needs_grad(*s) {
                    let xv = self.value(*x);
                    let mut ds = 0.0;
                    for (&gv, &xvv) in g.data().iter().zip(xv.data()) {
                        ds += gv * xvv;
                    }
                    let shape = self.value(*s).shape().to_vec();
                    self.accumulate(grads, *s, Tensor::from_vec(shape, vec![ds]).unwrap());
                }
            }
            Op::Reshape(x) => {
                let xv = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    Tensor::from_vec(xv.shape().to_vec(), g.data().to_vec()).unwrap(),
                );
            }
        }
    }
}
