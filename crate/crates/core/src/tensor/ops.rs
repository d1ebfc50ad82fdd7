//! Elementwise primitives, linear projection, and log-softmax.

use super::{col_sums_acc, dims2, matmul_abt, matmul_acc, transpose, Graph, Op, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::Mode;

impl<T: Scalar> Graph<T> {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sa != sb {
            return Err(Error::shape(format!("add: {sa:?} vs {sb:?}")));
        }
        let data: Vec<T> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| x + y)
            .collect();
        let mut t = Tensor { shape: sa.clone(), data, grad: None, requires_grad: false };
        t.requires_grad = self.any_requires_grad(&[a, b]);
        Ok(self.push(t, Op::Add { a, b }))
    }

    /// Elementwise (Hadamard) product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sa != sb {
            return Err(Error::shape(format!("mul: {sa:?} vs {sb:?}")));
        }
        let data: Vec<T> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| x * y)
            .collect();
        let mut t = Tensor { shape: sa.clone(), data, grad: None, requires_grad: false };
        t.requires_grad = self.any_requires_grad(&[a, b]);
        Ok(self.push(t, Op::Mul { a, b }))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let data: Vec<T> = self.value(x).data.iter().map(|&v| v * c).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
            grad: None,
            requires_grad: self.needs(x),
        };
        self.push(t, Op::Scale { x, c })
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = T::zero();
        for &v in &self.value(x).data {
            s += v;
        }
        let t = Tensor {
            shape: vec![1],
            data: vec![s],
            grad: None,
            requires_grad: self.needs(x),
        };
        self.push(t, Op::Sum { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<T> = self
            .value(x)
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
            grad: None,
            requires_grad: self.needs(x),
        };
        self.push(t, Op::Relu { x })
    }

    /// Inverted dropout: keep probability `1-p`, kept values scaled by
    /// `1/(1-p)` so the train-mode expectation equals the eval-mode output.
    /// In eval mode (or at `p = 0`) this is the identity and records nothing.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        mode: Mode,
        rng: &mut impl rand::Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = T::from_f64_c(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep_scale })
            .collect();
        let data: Vec<T> = self.value(x).data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
            grad: None,
            requires_grad: self.needs(x),
        };
        Ok(self.push(t, Op::Dropout { x, mask }))
    }

    /// Log-softmax over the last axis, stabilized by max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape.clone();
        let classes = *shape.last().expect("log_softmax input has at least one axis");
        let xd = &self.value(x).data;
        let mut data = vec![T::zero(); xd.len()];
        for (orow, xrow) in data.chunks_mut(classes).zip(xd.chunks(classes)) {
            let mut m = xrow[0];
            for &v in xrow {
                if v > m {
                    m = v;
                }
            }
            let mut lse = T::zero();
            for &v in xrow {
                lse += (v - m).exp();
            }
            let lse = m + lse.ln();
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o = v - lse;
            }
        }
        let t = Tensor { shape, data, grad: None, requires_grad: self.needs(x) };
        self.push(t, Op::LogSoftmax { x, classes })
    }

    /// Affine projection along the last axis: `y = x · Wᵀ + b` with `W` of
    /// shape `out×in` and `b` of shape `out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape.clone();
        let in_dim = *xs.last().ok_or_else(|| Error::shape("linear input of rank 0"))?;
        let (out_dim, wd) = dims2(self.value(w), "linear weight")?;
        if wd != in_dim {
            return Err(Error::shape(format!(
                "linear: input feature {in_dim} vs weight {out_dim}×{wd}"
            )));
        }
        if self.value(b).shape != [out_dim] {
            return Err(Error::shape(format!(
                "linear bias wants shape [{out_dim}], got {:?}",
                self.value(b).shape
            )));
        }
        let rows = self.value(x).numel() / in_dim;
        let mut data = matmul_abt(&self.value(x).data, &self.value(w).data, rows, in_dim, out_dim);
        let bd = &self.value(b).data;
        for orow in data.chunks_mut(out_dim) {
            for (o, &bv) in orow.iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = out_dim;
        let mut t = Tensor { shape, data, grad: None, requires_grad: false };
        t.requires_grad = self.any_requires_grad(&[x, w, b]);
        Ok(self.push(t, Op::Linear { x, w, b }))
    }
}

pub(super) fn log_softmax_backward<T: Scalar>(
    y: &[T],
    gy: &[T],
    classes: usize,
    x: Var,
    g: &Graph<T>,
    left: &mut [Option<Vec<T>>],
) {
    // dx = gy - softmax(x) * sum(gy) per row, with softmax = exp(y)
    if let Some(gx) = g.parent_grad(left, x) {
        for ((gxrow, gyrow), yrow) in gx.chunks_mut(classes).zip(gy.chunks(classes)).zip(y.chunks(classes)) {
            let mut s = T::zero();
            for &v in gyrow {
                s += v;
            }
            for ((gv, &yv), &lv) in gxrow.iter_mut().zip(gyrow).zip(yrow) {
                *gv += yv - lv.exp() * s;
            }
        }
    }
}

pub(super) fn linear_backward<T: Scalar>(
    g: &Graph<T>,
    gy: &[T],
    x: Var,
    w: Var,
    b: Var,
    left: &mut [Option<Vec<T>>],
) {
    let in_dim = *g.value(x).shape.last().unwrap();
    let out_dim = g.value(w).shape[0];
    let rows = g.value(x).numel() / in_dim;
    if g.needs(x) {
        let wd = g.value(w).data.clone();
        let gx = g.parent_grad(left, x).unwrap();
        matmul_acc(gy, &wd, rows, out_dim, in_dim, gx);
    }
    if g.needs(w) {
        let gyt = transpose(gy, rows, out_dim);
        let xd = g.value(x).data.clone();
        let gw = g.parent_grad(left, w).unwrap();
        matmul_acc(&gyt, &xd, out_dim, rows, in_dim, gw);
    }
    if let Some(gb) = g.parent_grad(left, b) {
        col_sums_acc(gy, rows, out_dim, gb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let y = g.log_softmax(x);
        let want = -(2.0f64).ln();
        for &v in &g.value(y).data {
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_shift_invariance() {
        let logits = vec![0.3, -1.2, 2.5, 0.0];
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::new(vec![1, 4], logits.clone()).unwrap());
        let b = g.leaf(Tensor::new(vec![1, 4], logits.iter().map(|v| v + 7.25).collect()).unwrap());
        let ya = g.log_softmax(a);
        let yb = g.log_softmax(b);
        for (&u, &v) in g.value(ya).data.iter().zip(&g.value(yb).data) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn log_softmax_exponentiates_to_a_distribution() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64).sin() * 3.0).collect()).unwrap());
        let y = g.log_softmax(x);
        for row in g.value(y).data.chunks(4) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn dropout_train_expectation_matches_eval() {
        // Inverted dropout: averaging many masks approaches the identity.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut acc = 0.0f64;
        for _ in 0..n {
            let mut g = Graph::<f64>::new();
            let x = g.leaf(Tensor::new(vec![1], vec![1.0]).unwrap());
            let y = g.dropout(x, 0.3, Mode::Train, &mut rng).unwrap();
            acc += g.value(y).data[0];
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn linear_applies_bias_per_output() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
        let w = g.leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = g.leaf(Tensor::new(vec![2], vec![10.0, 20.0]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).shape, vec![2, 2]);
        assert_eq!(g.value(y).data, vec![11.0, 24.0, 12.0, 25.0]);
    }

    #[test]
    fn scale_and_add_compose_affinely() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::scalar(2.0));
        let b = g.leaf(Tensor::scalar(5.0));
        let sb = g.scale(b, 0.1);
        let total = g.add(a, sb).unwrap();
        assert_eq!(g.value(total).data[0], 2.5);
    }
}
