//! Batch normalization over the channel axis of `B×C×H×W` maps.

use super::{dims4, Graph, Op, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch statistics produced by a train-mode forward pass; the
/// owner of the running stats folds them in with [`BN_MOMENTUM`].
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> Graph<T> {
    /// Train-mode batch norm: normalizes with the batch statistics computed
    /// over the batch and spatial axes and returns them for the running
    /// buffers.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, BatchStats<T>)> {
        let (bs, c, h, w) = dims4(self.value(x), "batchnorm input")?;
        check_affine(self.value(gamma), self.value(beta), c)?;
        let n = bs * h * w;
        let hw = h * w;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        {
            let xd = &self.value(x).data;
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..bs {
                    let plane = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    for &v in plane {
                        s += v;
                    }
                }
                let m = s / T::from_f64_c(n as f64);
                let mut sq = T::zero();
                for b in 0..bs {
                    let plane = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    for &v in plane {
                        let d = v - m;
                        sq += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = sq / T::from_f64_c(n as f64);
            }
        }
        let invstd: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + T::from_f64_c(BN_EPS)).sqrt())
            .collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &invstd, bs, c, hw);
        let mut t = Tensor::new(vec![bs, c, h, w], out)?;
        t.requires_grad = self.any_requires_grad(&[x, gamma, beta]);
        let var_out = var.clone();
        let v = self.push(
            t,
            Op::BatchNorm { x, gamma, beta, mean: mean.clone(), invstd, train: true },
        );
        Ok((v, BatchStats { mean, var: var_out }))
    }

    /// Eval-mode batch norm: normalizes with the running statistics.
    /// Before any train step the owner's buffers are mean 0, variance 1.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<Var> {
        let (bs, c, h, w) = dims4(self.value(x), "batchnorm input")?;
        check_affine(self.value(gamma), self.value(beta), c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(format!(
                "batchnorm running stats want {c} channels, got {}/{}",
                running_mean.len(),
                running_var.len()
            )));
        }
        let hw = h * w;
        let invstd: Vec<T> = running_var
            .iter()
            .map(|&v| T::one() / (v + T::from_f64_c(BN_EPS)).sqrt())
            .collect();
        let out = self.bn_apply(x, gamma, beta, running_mean, &invstd, bs, c, hw);
        let mut t = Tensor::new(vec![bs, c, h, w], out)?;
        t.requires_grad = self.any_requires_grad(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::BatchNorm { x, gamma, beta, mean: running_mean.to_vec(), invstd, train: false },
        ))
    }

    fn bn_apply(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        invstd: &[T],
        bs: usize,
        c: usize,
        hw: usize,
    ) -> Vec<T> {
        let xd = &self.value(x).data;
        let gd = &self.value(gamma).data;
        let bd = &self.value(beta).data;
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..bs {
            for ch in 0..c {
                let (m, s, g, be) = (mean[ch], invstd[ch], gd[ch], bd[ch]);
                let src = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = (v - m) * s * g + be;
                }
            }
        }
        out
    }
}

fn check_affine<T: Scalar>(gamma: &Tensor<T>, beta: &Tensor<T>, c: usize) -> Result<()> {
    if gamma.shape != [c] || beta.shape != [c] {
        return Err(Error::shape(format!(
            "batchnorm affine parameters want shape [{c}], got {:?}/{:?}",
            gamma.shape, beta.shape
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(super) fn batchnorm_backward<T: Scalar>(
    g: &Graph<T>,
    gy: &[T],
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[T],
    invstd: &[T],
    train: bool,
    left: &mut [Option<Vec<T>>],
) {
    let (bs, c, h, w) = dims4(g.value(x), "batchnorm input").expect("checked at forward");
    let hw = h * w;
    let n = bs * hw;
    let n_t = T::from_f64_c(n as f64);
    let xd = &g.value(x).data;
    let gd = &g.value(gamma).data;

    // Per-channel reductions shared by all three gradients.
    let mut sum_gy = vec![T::zero(); c];
    let mut sum_gy_xhat = vec![T::zero(); c];
    for b in 0..bs {
        for ch in 0..c {
            let (m, s) = (mean[ch], invstd[ch]);
            let base = (b * c + ch) * hw;
            for i in 0..hw {
                let gv = gy[base + i];
                sum_gy[ch] += gv;
                sum_gy_xhat[ch] += gv * (xd[base + i] - m) * s;
            }
        }
    }

    if let Some(gb) = g.parent_grad(left, beta) {
        for (o, &v) in gb.iter_mut().zip(&sum_gy) {
            *o += v;
        }
    }
    if let Some(gg) = g.parent_grad(left, gamma) {
        for (o, &v) in gg.iter_mut().zip(&sum_gy_xhat) {
            *o += v;
        }
    }
    if g.needs(x) {
        let mut dx = vec![T::zero(); xd.len()];
        for b in 0..bs {
            for ch in 0..c {
                let (m, s, ga) = (mean[ch], invstd[ch], gd[ch]);
                let base = (b * c + ch) * hw;
                if train {
                    // batch statistics depend on x
                    let mg = sum_gy[ch] / n_t;
                    let mgx = sum_gy_xhat[ch] / n_t;
                    for i in 0..hw {
                        let xhat = (xd[base + i] - m) * s;
                        dx[base + i] = ga * s * (gy[base + i] - mg - xhat * mgx);
                    }
                } else {
                    for i in 0..hw {
                        dx[base + i] = ga * s * gy[base + i];
                    }
                }
            }
        }
        let gx = g.parent_grad(left, x).unwrap();
        for (o, v) in gx.iter_mut().zip(dx) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine_leaves(g: &mut Graph<f64>, c: usize, gamma: f64, beta: f64) -> (Var, Var) {
        let ga = g.leaf(Tensor::full(vec![c], gamma));
        let be = g.leaf(Tensor::full(vec![c], beta));
        (ga, be)
    }

    #[test]
    fn zero_mean_unit_var_input_is_a_fixed_point() {
        // channel values {-1, 1} have mean 0 and variance 1
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 1, 2, 2], vec![-1.0, 1.0, -1.0, 1.0]).unwrap());
        let (ga, be) = affine_leaves(&mut g, 1, 1.0, 0.0);
        let (y, stats) = g.batchnorm_train(x, ga, be).unwrap();
        assert!((stats.mean[0]).abs() < 1e-12);
        assert!((stats.var[0] - 1.0).abs() < 1e-12);
        for (&got, &want) in g.value(y).data.iter().zip(&g.value(x).data) {
            // off by the epsilon in the denominator only
            assert!((got - want).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_gamma_outputs_beta_everywhere() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 2, 1, 2], vec![3.0, -1.0, 0.5, 9.0]).unwrap());
        let (ga, be) = affine_leaves(&mut g, 2, 0.0, 0.7);
        let (y, _) = g.batchnorm_train(x, ga, be).unwrap();
        for &v in &g.value(y).data {
            assert_eq!(v, 0.7);
        }
    }

    #[test]
    fn eval_with_initial_stats_is_near_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 1, 1, 3], vec![0.2, -0.4, 1.0]).unwrap());
        let (ga, be) = affine_leaves(&mut g, 1, 1.0, 0.0);
        let y = g.batchnorm_eval(x, ga, be, &[0.0], &[1.0]).unwrap();
        for (&got, &want) in g.value(y).data.iter().zip(&g.value(x).data) {
            assert!((got - want).abs() < 1e-4);
        }
    }

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(
            Tensor::new(vec![2, 2, 1, 2], vec![1.0, 2.0, 10.0, 20.0, 3.0, 4.0, 30.0, 40.0])
                .unwrap(),
        );
        let (ga, be) = affine_leaves(&mut g, 2, 1.0, 0.0);
        let (y, _) = g.batchnorm_train(x, ga, be).unwrap();
        // each channel of the output has mean ~0 and variance ~1
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| {
                    g.value(y).data[(b * 2 + ch) * 2..(b * 2 + ch + 1) * 2].to_vec()
                })
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
