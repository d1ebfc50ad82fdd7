//! Adam with bias correction, keyed to the network's parameter visit order.

use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second-moment buffers, one pair per parameter in visit order.
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_network(net: &Network<T>) -> Self {
        let mut m = Vec::new();
        net.visit_params(&mut |_, t| m.push(vec![T::zero(); t.numel()]));
        let v = m.clone();
        AdamState { step: 0, m, v, hyper: AdamHyper::default() }
    }

    /// One update over every parameter. `grads` is aligned with the visit
    /// order; `None` entries are parameters the last backward pass never
    /// reached and get a zero gradient. A non-finite gradient aborts before
    /// touching any parameter.
    pub fn step(
        &mut self,
        net: &mut Network<T>,
        grads: &[Option<Vec<T>>],
        lr: f64,
    ) -> Result<()> {
        let mut failed: Option<Error> = None;
        let mut idx = 0;
        net.visit_params(&mut |name, _| {
            if failed.is_none() {
                if let Some(g) = grads.get(idx).and_then(|g| g.as_ref()) {
                    if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                        failed = Some(Error::numeric(format!(
                            "non-finite gradient {bad} in parameter '{name}'"
                        )));
                    }
                }
            }
            idx += 1;
        });
        if let Some(e) = failed {
            return Err(e);
        }

        self.step += 1;
        let step = self.step;
        let hy = self.hyper;
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        net.visit_params_mut(&mut |_, t| {
            let zero;
            let grad: &[T] = match grads.get(idx).and_then(|g| g.as_deref()) {
                Some(g) => g,
                None => {
                    zero = vec![T::zero(); t.numel()];
                    &zero
                }
            };
            adam_update(&mut t.data, grad, &mut m[idx], &mut v[idx], step, lr, &hy);
            idx += 1;
        });
        Ok(())
    }
}

/// Standard Adam update of one buffer; `step` is 1-based for bias
/// correction.
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    hy: &AdamHyper,
) {
    let b1 = T::from_f64_c(hy.beta1);
    let b2 = T::from_f64_c(hy.beta2);
    let one = T::one();
    let corr1 = T::from_f64_c(1.0 - hy.beta1.powi(step as i32));
    let corr2 = T::from_f64_c(1.0 - hy.beta2.powi(step as i32));
    let lr_t = T::from_f64_c(lr);
    let eps = T::from_f64_c(hy.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let mhat = m[i] / corr1;
        let vhat = v[i] / corr2;
        param[i] = param[i] - lr_t * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![1.0f64, -2.0];
        let g = vec![0.0, 0.0];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        adam_update(&mut p, &g, &mut m, &mut v, 1, 0.1, &AdamHyper::default());
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn one_step_on_a_parabola_descends() {
        // f(x) = x^2, grad = 2x at x = 1
        let mut p = vec![1.0f64];
        let g = vec![2.0];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adam_update(&mut p, &g, &mut m, &mut v, 1, 0.1, &AdamHyper::default());
        assert!(p[0] < 1.0, "x did not decrease: {}", p[0]);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut p = vec![0.5f32, -0.25, 2.0];
            let mut m = vec![0.0; 3];
            let mut v = vec![0.0; 3];
            for step in 1..=5 {
                let g: Vec<f32> = p.iter().map(|x| 2.0 * x).collect();
                adam_update(&mut p, &g, &mut m, &mut v, step, 0.05, &AdamHyper::default());
            }
            p
        };
        assert_eq!(run(), run());
    }
}
