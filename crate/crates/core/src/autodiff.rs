//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s; calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and accumulates
//! exact analytic gradients. Ops never fail eagerly: the first non-finite
//! result poisons the graph and is reported (with the primitive's name) by
//! [`Graph::backward`] or [`Graph::check`].

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Square(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Recip(..) => "recip",
            Op::Square(..) => "square",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::Clamp(..) => "clamp",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::SumCols(..) => "sum_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    error: RefCell<Option<Error>>,
}

/// Gradients indexed by [`Var`], produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a leaf (parameter, input or constant).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the first error recorded while building the graph, if any.
    pub fn check(&self) -> Result<()> {
        match &*self.error.borrow() {
            None => Ok(()),
            Some(Error::NonFinite { primitive }) => Err(Error::NonFinite { primitive }),
            Some(Error::Dimension {
                context,
                expected,
                found,
            }) => Err(Error::Dimension {
                context: context.clone(),
                expected: expected.clone(),
                found: found.clone(),
            }),
            Some(other) => Err(Error::InvalidArgument(other.to_string())),
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        if !value.is_finite() {
            let mut err = self.error.borrow_mut();
            if err.is_none() {
                *err = Some(Error::NonFinite { primitive: op.name() });
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    fn fail(&self, e: Error, shape: &[usize]) -> Var {
        let mut err = self.error.borrow_mut();
        if err.is_none() {
            *err = Some(e);
        }
        drop(err);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Tensor::zeros(shape),
            op: Op::Leaf,
        });
        Var(nodes.len() - 1)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>, op: Op) -> Var {
        let res = {
            let (va, vb) = (self.value(a), self.value(b));
            f(&va, &vb)
        };
        match res {
            Ok(v) => self.push(v, op),
            Err(e) => {
                let shape = self.value(a).shape().to_vec();
                self.fail(e, &shape)
            }
        }
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Tensor::matmul, Op::MatMul(a, b))
    }

    /// `a · wᵀ`, the affine-layer product with weights stored `[out×in]`.
    pub fn matmul_t(&self, a: Var, w: Var) -> Var {
        self.binary(a, w, Tensor::matmul_t, Op::MatMulT(a, w))
    }

    pub fn add_row(&self, a: Var, bias: Var) -> Var {
        self.binary(a, bias, Tensor::add_row, Op::AddRow(a, bias))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Tensor::add, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Tensor::sub, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Tensor::mul, Op::Mul(a, b))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, |v| v + c, Op::AddScalar(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn recip(&self, a: Var) -> Var {
        self.unary(a, f64::recip, Op::Recip(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        self.unary(a, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// `log(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |v| v.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let m = self.value(a).mean();
        self.push(Tensor::scalar(m), Op::MeanAll(a))
    }

    /// Row sums of a matrix, `[m×n] → [m]`.
    pub fn sum_cols(&self, a: Var) -> Var {
        let v = self.value(a).sum_cols();
        self.push(v, Op::SumCols(a))
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Tensor::concat_cols, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        let res = self.value(a).slice_cols(start, end);
        match res {
            Ok(v) => self.push(v, Op::SliceCols(a, start, end)),
            Err(e) => {
                let rows = self.value(a).rows();
                self.fail(e, &[rows, end.saturating_sub(start)])
            }
        }
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check()?;
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::dim("backward", "scalar loss", format!("{:?}", nodes[loss.0].value.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            for (v, t) in local_grads(&nodes, node, g)? {
                accumulate(&mut grads, v, t);
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}


/// Vector-Jacobian products of one node with respect to its inputs.
fn local_grads(nodes: &[Node], node: &Node, g: Tensor) -> Result<Vec<(Var, Tensor)>> {
    let val = |v: Var| &nodes[v.0].value;
    let mut out = Vec::with_capacity(2);
    let mut acc = |v: Var, t: Tensor| out.push((v, t));
    match node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            acc(a, g.matmul_t(val(b))?);
            acc(b, val(a).t_matmul(&g)?);
        }
        Op::MatMulT(a, w) => {
            acc(a, g.matmul(val(w))?);
            acc(w, g.t_matmul(val(a))?);
        }
        Op::AddRow(a, bias) => {
            let gb = g.sum_rows().reshape(val(bias).shape().to_vec())?;
            acc(bias, gb);
            acc(a, g);
        }
        Op::Add(a, b) => {
            acc(b, g.clone());
            acc(a, g);
        }
        Op::Sub(a, b) => {
            acc(b, g.scale(-1.0));
            acc(a, g);
        }
        Op::Mul(a, b) => {
            acc(a, g.mul(val(b))?);
            acc(b, g.mul(val(a))?);
        }
        Op::Scale(a, c) => acc(a, g.scale(c)),
        Op::AddScalar(a) => acc(a, g),
        Op::Exp(a) => acc(a, g.mul(&node.value)?),
        Op::Log(a) => acc(a, g.zip_map(val(a), |g, x| g / x)?),
        Op::Recip(a) => acc(a, g.zip_map(&node.value, |g, y| -g * y * y)?),
        Op::Square(a) => acc(a, g.zip_map(val(a), |g, x| 2.0 * g * x)?),
        Op::Relu(a) => acc(a, g.zip_map(val(a), |g, x| if x > 0.0 { g } else { 0.0 })?),
        Op::LeakyRelu(a, s) => acc(a, g.zip_map(val(a), |g, x| if x > 0.0 { g } else { s * g })?),
        Op::Tanh(a) => acc(a, g.zip_map(&node.value, |g, y| g * (1.0 - y * y))?),
        Op::Softplus(a) => acc(a, g.zip_map(val(a), |g, x| g * sigmoid(x))?),
        Op::Clamp(a, lo, hi) => {
            acc(a, g.zip_map(val(a), |g, x| if (lo..=hi).contains(&x) { g } else { 0.0 })?)
        }
        Op::SumAll(a) => acc(a, Tensor::full(val(a).shape(), g.item())),
        Op::MeanAll(a) => {
            let n = val(a).numel().max(1) as f64;
            acc(a, Tensor::full(val(a).shape(), g.item() / n))
        }
        Op::SumCols(a) => {
            let (r, c) = (val(a).rows(), val(a).cols());
            let mut out = Vec::with_capacity(r * c);
            for &gi in g.data() {
                out.extend(std::iter::repeat_n(gi, c));
            }
            acc(a, Tensor::new(val(a).shape().to_vec(), out)?)
        }
        Op::ConcatCols(a, b) => {
            let ca = val(a).cols();
            let cb = val(b).cols();
            acc(a, g.slice_cols(0, ca)?.reshape(val(a).shape().to_vec())?);
            acc(b, g.slice_cols(ca, ca + cb)?.reshape(val(b).shape().to_vec())?);
        }
        Op::SliceCols(a, start, end) => {
            let (r, c) = (val(a).rows(), val(a).cols());
            let w = end - start;
            let mut out = vec![0.0; r * c];
            for row in 0..r {
                out[row * c + start..row * c + end].copy_from_slice(&g.data()[row * w..(row + 1) * w]);
            }
            acc(a, Tensor::new(val(a).shape().to_vec(), out)?)
        }
    }
    Ok(out)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(t.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(t),
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
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
