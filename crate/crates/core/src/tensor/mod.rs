//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it executes; [`Graph::backward`]
//! replays the chain rule over the recorded nodes in reverse order.
//! Recording order is construction order, so parents always precede their
//! consumers and one reverse sweep visits each node exactly once, with
//! gradients accumulating additively wherever a tensor feeds several
//! consumers.
//!
//! The engine deliberately implements only what a convolutional-recurrent
//! recognizer needs: 2-D/1-D convolution, 2×2 max-pooling, batch
//! normalization, bidirectional LSTM layers, column-wise flattening, a
//! handful of elementwise primitives, and a CTC loss head (attached in
//! [`crate::ctc`]).
//!
//! Kernels may parallelize internally but always reduce in a fixed order, so
//! forward values and gradients are bit-identical across runs and thread
//! counts.

mod conv;
mod kernels;
mod lstm;
mod norm;
mod ops;
mod pool;

pub use lstm::LstmParamVars;
pub use norm::{BatchStats, BN_EPS, BN_MOMENTUM};

pub(crate) use kernels::{axpy, col_sums_acc, matmul, matmul_abt, matmul_abt_acc, matmul_acc, transpose};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use lstm::LstmCache;

/// Dense row-major n-dimensional array, optionally carrying a gradient
/// buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} wants {numel} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); numel], grad: None, requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![v; numel], grad: None, requires_grad: false }
    }

    /// 0-d-like scalar, stored as shape `[1]`.
    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v], grad: None, requires_grad: false }
    }

    /// Samples elements uniformly from `[lo, hi)`.
    pub fn uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64_c(rng.random_range(lo..hi)))
            .collect();
        Tensor { shape, data, grad: None, requires_grad: false }
    }

    /// Marks the tensor as a trainable parameter.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row-major element access, for tests and small inspections.
    pub fn at(&self, idx: &[usize]) -> T {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} (extent {dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }
}

/// Handle to a tensor recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<T: Scalar> {
    pub(crate) tensor: Tensor<T>,
    pub(crate) op: Op<T>,
}

/// Recorded operation together with whatever context its backward rule needs.
pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    Sum { x: Var },
    Relu { x: Var },
    Dropout { x: Var, mask: Vec<T> },
    LogSoftmax { x: Var, classes: usize },
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, padding: usize, cols: Option<Vec<T>> },
    Conv1d { x: Var, w: Var, b: Var },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, invstd: Vec<T>, train: bool },
    Bilstm { x: Var, fwd: LstmParamVars, bwd: LstmParamVars, hidden: usize, cache: Box<LstmCache<T>> },
    FlattenMax { x: Var, argmax: Vec<usize> },
    FlattenConcat { x: Var },
    CtcLoss { logits: Var, grad: Vec<T> },
}

/// Recording graph: a flat arena of nodes in topological (construction)
/// order. One graph instance must not be mutated from two execution contexts
/// at once; tensors read out of it are plain values and freely shareable.
#[derive(Default)]
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Registers an input tensor (parameter or data) as a graph leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    /// Gradient buffer of `v`, populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn push(&mut self, tensor: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_requires_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tensor.requires_grad)
    }

    /// Runs the reverse sweep from a scalar loss node. Every reachable
    /// tensor with `requires_grad` receives its gradient; calling again
    /// without clearing accumulates on top of the previous pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].tensor.shape
            )));
        }
        let n = self.nodes.len();
        // fresh workspace per pass, merged into stored gradients at the end
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        acc_slot(&mut grads[loss.0], 1)[0] = T::one();

        for i in (0..n).rev() {
            if !self.nodes[i].tensor.requires_grad {
                continue;
            }
            let (left, right) = grads.split_at_mut(i);
            let Some(gy) = right[0].as_deref() else { continue };
            self.backward_node(i, gy, left)?;
        }

        for (nd, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                match &mut nd.tensor.grad {
                    Some(stored) => axpy(T::one(), &g, stored),
                    None => nd.tensor.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, gy: &[T], left: &mut [Option<Vec<T>>]) -> Result<()> {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(g) = self.parent_grad(left, v) {
                        axpy(T::one(), gy, g);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let bd = self.value(b).data.clone();
                    let g = self.parent_grad(left, a).unwrap();
                    for ((gv, &yv), &bv) in g.iter_mut().zip(gy).zip(&bd) {
                        *gv += yv * bv;
                    }
                }
                if self.needs(b) {
                    let ad = self.value(a).data.clone();
                    let g = self.parent_grad(left, b).unwrap();
                    for ((gv, &yv), &av) in g.iter_mut().zip(gy).zip(&ad) {
                        *gv += yv * av;
                    }
                }
            }
            Op::Scale { x, c } => {
                let c = *c;
                if let Some(g) = self.parent_grad(left, *x) {
                    axpy(c, gy, g);
                }
            }
            Op::Sum { x } => {
                if let Some(g) = self.parent_grad(left, *x) {
                    let s = gy[0];
                    for gv in g.iter_mut() {
                        *gv += s;
                    }
                }
            }
            Op::Relu { x } => {
                let x = *x;
                if self.needs(x) {
                    let xd = &self.nodes[x.0].tensor.data;
                    let contrib: Vec<T> = xd
                        .iter()
                        .zip(gy)
                        .map(|(&xv, &yv)| if xv > T::zero() { yv } else { T::zero() })
                        .collect();
                    let g = self.parent_grad(left, x).unwrap();
                    axpy(T::one(), &contrib, g);
                }
            }
            Op::Dropout { x, mask } => {
                let contrib: Vec<T> = mask.iter().zip(gy).map(|(&m, &yv)| m * yv).collect();
                if let Some(g) = self.parent_grad(left, *x) {
                    axpy(T::one(), &contrib, g);
                }
            }
            Op::LogSoftmax { x, classes } => {
                ops::log_softmax_backward(&self.nodes[i].tensor.data, gy, *classes, *x, self, left);
            }
            Op::Linear { x, w, b } => ops::linear_backward(self, gy, *x, *w, *b, left),
            Op::Conv2d { x, w, b, stride, padding, cols } => {
                let out_shape = &self.nodes[i].tensor.shape;
                conv::conv2d_backward(
                    self, gy, out_shape, *x, *w, *b, *stride, *padding, cols.as_deref(), left,
                )
            }
            Op::Conv1d { x, w, b } => conv::conv1d_backward(self, gy, *x, *w, *b, left),
            Op::MaxPool2d { x, argmax } => {
                if let Some(g) = self.parent_grad(left, *x) {
                    for (&src, &yv) in argmax.iter().zip(gy) {
                        g[src] += yv;
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, invstd, train } => {
                norm::batchnorm_backward(self, gy, *x, *gamma, *beta, mean, invstd, *train, left)
            }
            Op::Bilstm { x, fwd, bwd, hidden, cache } => {
                lstm::bilstm_backward(self, gy, *x, *fwd, *bwd, *hidden, cache, left)
            }
            Op::FlattenMax { x, argmax } => {
                if let Some(g) = self.parent_grad(left, *x) {
                    for (&src, &yv) in argmax.iter().zip(gy) {
                        g[src] += yv;
                    }
                }
            }
            Op::FlattenConcat { x } => pool::flatten_concat_backward(self, gy, *x, left),
            Op::CtcLoss { logits, grad } => {
                let s = gy[0];
                if let Some(g) = self.parent_grad(left, *logits) {
                    axpy(s, grad, g);
                }
            }
        }
        Ok(())
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    /// Lazily-allocated gradient slot of a parent node, or `None` when the
    /// parent does not take part in differentiation.
    pub(crate) fn parent_grad<'a>(
        &self,
        left: &'a mut [Option<Vec<T>>],
        v: Var,
    ) -> Option<&'a mut [T]> {
        if !self.needs(v) {
            return None;
        }
        Some(acc_slot(&mut left[v.0], self.nodes[v.0].tensor.numel()))
    }
}

pub(crate) fn acc_slot<T: Scalar>(slot: &mut Option<Vec<T>>, numel: usize) -> &mut [T] {
    slot.get_or_insert_with(|| vec![T::zero(); numel]).as_mut_slice()
}

/// Extracts `(d0, d1, d2, d3)` from a rank-4 tensor.
pub(crate) fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape.as_slice() {
        &[a, b, c, d] => Ok((a, b, c, d)),
        s => Err(Error::shape(format!("{what} wants a rank-4 tensor, got shape {s:?}"))),
    }
}

pub(crate) fn dims3<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape.as_slice() {
        &[a, b, c] => Ok((a, b, c)),
        s => Err(Error::shape(format!("{what} wants a rank-3 tensor, got shape {s:?}"))),
    }
}

pub(crate) fn dims2<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        &[a, b] => Ok((a, b)),
        s => Err(Error::shape(format!("{what} wants a rank-2 tensor, got shape {s:?}"))),
    }
}
