//! 2×2 stride-2 max-pooling and the column-wise flattening operations that
//! turn a `B×C×H×W` feature map into a length-`W` sequence.

use super::{dims4, Graph, Op, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Graph<T> {
    /// 2×2 max-pooling with stride 2. The backward pass routes each window's
    /// gradient to the first-encountered maximum (row-major scan order).
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (bs, c, h, w) = dims4(self.value(x), "maxpool2d input")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "maxpool2d needs even extents, got {h}×{w}; choose a canvas divisible by the \
                 backbone downscale"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![T::zero(); bs * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        {
            let xd = &self.value(x).data;
            for bc in 0..bs * c {
                let base = bc * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = base + (oy * 2 + dy) * w + ox * 2 + dx;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = (bc * oh + oy) * ow + ox;
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        let mut t = Tensor::new(vec![bs, c, oh, ow], out)?;
        t.requires_grad = self.needs(x);
        Ok(self.push(t, Op::MaxPool2d { x, argmax }))
    }

    /// Column-wise max flatten: `B×C×H×W → B×W×C` with
    /// `out[b,j,c] = max_i x[b,c,i,j]`. Gradient goes to the first
    /// row attaining the maximum.
    pub fn flatten_maxpool(&mut self, x: Var) -> Result<Var> {
        let (bs, c, h, w) = dims4(self.value(x), "flatten_maxpool input")?;
        let mut out = vec![T::zero(); bs * w * c];
        let mut argmax = vec![0usize; out.len()];
        {
            let xd = &self.value(x).data;
            for b in 0..bs {
                for j in 0..w {
                    for ch in 0..c {
                        let base = (b * c + ch) * h * w + j;
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0;
                        for i in 0..h {
                            let idx = base + i * w;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                        let o = (b * w + j) * c + ch;
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        let mut t = Tensor::new(vec![bs, w, c], out)?;
        t.requires_grad = self.needs(x);
        Ok(self.push(t, Op::FlattenMax { x, argmax }))
    }

    /// Column-wise concatenation flatten: `B×C×H×W → B×W×(H·C)`, rows stacked
    /// top to bottom with channels contiguous within a row.
    pub fn flatten_concat(&mut self, x: Var) -> Result<Var> {
        let (bs, c, h, w) = dims4(self.value(x), "flatten_concat input")?;
        let mut out = vec![T::zero(); bs * w * h * c];
        {
            let xd = &self.value(x).data;
            for b in 0..bs {
                for j in 0..w {
                    let orow = &mut out[(b * w + j) * h * c..(b * w + j + 1) * h * c];
                    for i in 0..h {
                        for ch in 0..c {
                            orow[i * c + ch] = xd[(b * c + ch) * h * w + i * w + j];
                        }
                    }
                }
            }
        }
        let mut t = Tensor::new(vec![bs, w, h * c], out)?;
        t.requires_grad = self.needs(x);
        Ok(self.push(t, Op::FlattenConcat { x }))
    }
}

pub(super) fn flatten_concat_backward<T: Scalar>(
    g: &Graph<T>,
    gy: &[T],
    x: Var,
    left: &mut [Option<Vec<T>>],
) {
    let (bs, c, h, w) = dims4(g.value(x), "flatten_concat input").expect("checked at forward");
    if let Some(gx) = g.parent_grad(left, x) {
        for b in 0..bs {
            for j in 0..w {
                let grow = &gy[(b * w + j) * h * c..(b * w + j + 1) * h * c];
                for i in 0..h {
                    for ch in 0..c {
                        gx[(b * c + ch) * h * w + i * w + j] += grow[i * c + ch];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_window_takes_the_max() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.maxpool2d(x).unwrap();
        assert_eq!(g.value(y).data, vec![4.0]);
    }

    #[test]
    fn constant_input_routes_gradient_to_one_element_per_window() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![1, 1, 4, 4], 0.5).with_grad());
        let y = g.maxpool2d(x).unwrap();
        assert!(g.value(y).data.iter().all(|&v| v == 0.5));
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        // ties broken toward the first-encountered element: top-left of each window
        for oy in 0..2 {
            for ox in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = grad[(oy * 2 + dy) * 4 + ox * 2 + dx];
                        let want = if dy == 0 && dx == 0 { 1.0 } else { 0.0 };
                        assert_eq!(v, want);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::uniform(vec![1, 1, 4, 4], -1.0, 1.0, &mut rng);
        let xd = x.data.clone();
        let mut g = Graph::new();
        let v = g.leaf(x);
        let y = g.maxpool2d(v).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(xd[(oy * 2 + dy) * 4 + ox * 2 + dx]);
                    }
                }
                assert_eq!(g.value(y).data[oy * 2 + ox], m);
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_extents() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(vec![1, 1, 3, 4]));
        assert!(g.maxpool2d(x).is_err());
    }

    #[test]
    fn flatten_maxpool_takes_column_max() {
        let mut g = Graph::<f64>::new();
        // one channel, H=3, W=1, column (1, 3, 2)
        let x = g.leaf(Tensor::new(vec![1, 1, 3, 1], vec![1.0, 3.0, 2.0]).unwrap());
        let y = g.flatten_maxpool(x).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 1, 1]);
        assert_eq!(g.value(y).data, vec![3.0]);
    }

    #[test]
    fn flatten_maxpool_is_row_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (bs, c, h, w) = (2, 3, 4, 5);
        let x = Tensor::<f64>::uniform(vec![bs, c, h, w], -1.0, 1.0, &mut rng);
        // cyclic shift of rows within every column
        let mut shifted = x.clone();
        for b in 0..bs {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        shifted.data[(b * c + ch) * h * w + ((i + 1) % h) * w + j] =
                            x.data[(b * c + ch) * h * w + i * w + j];
                    }
                }
            }
        }
        let mut g = Graph::new();
        let a = g.leaf(x);
        let b_ = g.leaf(shifted);
        let ya = g.flatten_maxpool(a).unwrap();
        let yb = g.flatten_maxpool(b_).unwrap();
        assert_eq!(g.value(ya).data, g.value(yb).data);
    }

    #[test]
    fn flatten_concat_is_a_bijection_per_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f64>::uniform(vec![1, 2, 3, 4], 0.0, 1.0, &mut rng);
        let xd = x.data.clone();
        let mut g = Graph::new();
        let v = g.leaf(x);
        let y = g.flatten_concat(v).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 4, 6]);
        for j in 0..4 {
            let col: Vec<f64> = g.value(y).data[j * 6..(j + 1) * 6].to_vec();
            let mut want: Vec<f64> = Vec::new();
            for i in 0..3 {
                for ch in 0..2 {
                    want.push(xd[ch * 12 + i * 4 + j]);
                }
            }
            assert_eq!(col, want);
        }
    }

    #[test]
    fn flatten_concat_with_unit_height_equals_maxpool_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::uniform(vec![2, 3, 1, 4], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let v = g.leaf(x);
        let a = g.flatten_maxpool(v).unwrap();
        let b = g.flatten_concat(v).unwrap();
        assert_eq!(g.value(a).data, g.value(b).data);
    }
}
