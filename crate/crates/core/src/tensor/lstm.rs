//! Bidirectional LSTM layer with truncation-free backpropagation through
//! time.
//!
//! Cell: gates `i, f, g, o` with sigmoid/sigmoid/tanh/sigmoid activations,
//! `c_t = f⊙c_{t-1} + i⊙g`, `h_t = o⊙tanh(c_t)`, zero initial states. The
//! forward and backward direction outputs are concatenated per time step.

use super::{col_sums_acc, dims2, dims3, matmul, matmul_abt, matmul_abt_acc, matmul_acc, transpose, Graph, Op, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parameter handles for one LSTM direction: `w_ih: 4H×D`, `w_hh: 4H×H`,
/// `bias: 4H`, gate blocks ordered `[i, f, g, o]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmParamVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

pub(crate) struct LstmCache<T> {
    fwd: DirCache<T>,
    bwd: DirCache<T>,
}

/// Step-indexed activations of one direction (step = processing order).
struct DirCache<T> {
    gates: Vec<T>,  // T×B×4H, post-activation
    cells: Vec<T>,  // T×B×H
    hidden: Vec<T>, // (T+1)×B×H, slot 0 holds the zero initial state
}

impl<T: Scalar> DirCache<T> {
    fn empty() -> Self {
        DirCache { gates: Vec::new(), cells: Vec::new(), hidden: Vec::new() }
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl<T: Scalar> Graph<T> {
    /// Bidirectional LSTM over `x: B×T×D`, producing `B×T×2H`.
    pub fn bilstm(&mut self, x: Var, fwd: LstmParamVars, bwd: LstmParamVars) -> Result<Var> {
        let (bs, t_len, d) = dims3(self.value(x), "bilstm input")?;
        let hidden = self.check_dir(fwd, d, "forward")?;
        let hidden_b = self.check_dir(bwd, d, "backward")?;
        if hidden != hidden_b {
            return Err(Error::shape(format!(
                "bilstm direction hidden sizes differ: {hidden} vs {hidden_b}"
            )));
        }
        let requires_grad = self.any_requires_grad(&[
            x, fwd.w_ih, fwd.w_hh, fwd.bias, bwd.w_ih, bwd.w_hh, bwd.bias,
        ]);

        // time-major copy for contiguous per-step slices
        let x_tm = to_time_major(&self.value(x).data, bs, t_len, d);
        let (y_f, cache_f) = self.run_dir(&x_tm, fwd, bs, t_len, d, hidden, false, requires_grad);
        let (y_b, cache_b) = self.run_dir(&x_tm, bwd, bs, t_len, d, hidden, true, requires_grad);

        let h2 = 2 * hidden;
        let mut out = vec![T::zero(); bs * t_len * h2];
        for t in 0..t_len {
            for b in 0..bs {
                let dst = &mut out[(b * t_len + t) * h2..(b * t_len + t + 1) * h2];
                let src_f = &y_f[(t * bs + b) * hidden..(t * bs + b + 1) * hidden];
                let src_b = &y_b[(t * bs + b) * hidden..(t * bs + b + 1) * hidden];
                dst[..hidden].copy_from_slice(src_f);
                dst[hidden..].copy_from_slice(src_b);
            }
        }
        let mut t = Tensor::new(vec![bs, t_len, h2], out)?;
        t.requires_grad = requires_grad;
        let cache = Box::new(LstmCache { fwd: cache_f, bwd: cache_b });
        Ok(self.push(t, Op::Bilstm { x, fwd, bwd, hidden, cache }))
    }

    fn check_dir(&self, p: LstmParamVars, d: usize, which: &str) -> Result<usize> {
        let (h4, din) = dims2(self.value(p.w_ih), "lstm w_ih")?;
        let (h4h, hidden) = dims2(self.value(p.w_hh), "lstm w_hh")?;
        if din != d {
            return Err(Error::shape(format!(
                "bilstm {which} w_ih expects input size {din}, sequence has {d}"
            )));
        }
        if h4 != h4h || h4 != 4 * hidden {
            return Err(Error::shape(format!(
                "bilstm {which} gate dims inconsistent: w_ih {h4}×{din}, w_hh {h4h}×{hidden}"
            )));
        }
        if self.value(p.bias).shape != [h4] {
            return Err(Error::shape(format!(
                "bilstm {which} bias wants shape [{h4}], got {:?}",
                self.value(p.bias).shape
            )));
        }
        Ok(hidden)
    }

    /// One direction over time-major input; `y` comes back time-major with
    /// each step's output at its original time position.
    #[allow(clippy::too_many_arguments)]
    fn run_dir(
        &self,
        x_tm: &[T],
        p: LstmParamVars,
        bs: usize,
        t_len: usize,
        d: usize,
        hidden: usize,
        reverse: bool,
        keep_cache: bool,
    ) -> (Vec<T>, DirCache<T>) {
        let h4 = 4 * hidden;
        let w_ih = &self.value(p.w_ih).data;
        let w_hh = &self.value(p.w_hh).data;
        let bias = &self.value(p.bias).data;

        // input contribution for every step at once
        let xw = matmul_abt(x_tm, w_ih, t_len * bs, d, h4);

        let mut y = vec![T::zero(); t_len * bs * hidden];
        let mut cache = if keep_cache {
            DirCache {
                gates: vec![T::zero(); t_len * bs * h4],
                cells: vec![T::zero(); t_len * bs * hidden],
                hidden: vec![T::zero(); (t_len + 1) * bs * hidden],
            }
        } else {
            DirCache::empty()
        };
        let mut h_prev = vec![T::zero(); bs * hidden];
        let mut c_prev = vec![T::zero(); bs * hidden];
        let mut z = vec![T::zero(); bs * h4];

        for s in 0..t_len {
            let t = if reverse { t_len - 1 - s } else { s };
            z.copy_from_slice(&xw[t * bs * h4..(t + 1) * bs * h4]);
            matmul_abt_acc(&h_prev, w_hh, bs, hidden, h4, &mut z);
            for b in 0..bs {
                let zrow = &mut z[b * h4..(b + 1) * h4];
                for (zv, &bv) in zrow.iter_mut().zip(bias) {
                    *zv += bv;
                }
                for j in 0..hidden {
                    let gi = sigmoid(zrow[j]);
                    let gf = sigmoid(zrow[hidden + j]);
                    let gg = zrow[2 * hidden + j].tanh();
                    let go = sigmoid(zrow[3 * hidden + j]);
                    let c = gf * c_prev[b * hidden + j] + gi * gg;
                    let h = go * c.tanh();
                    zrow[j] = gi;
                    zrow[hidden + j] = gf;
                    zrow[2 * hidden + j] = gg;
                    zrow[3 * hidden + j] = go;
                    c_prev[b * hidden + j] = c;
                    h_prev[b * hidden + j] = h;
                    y[(t * bs + b) * hidden + j] = h;
                }
            }
            if keep_cache {
                cache.gates[s * bs * h4..(s + 1) * bs * h4].copy_from_slice(&z);
                cache.cells[s * bs * hidden..(s + 1) * bs * hidden].copy_from_slice(&c_prev);
                cache.hidden[(s + 1) * bs * hidden..(s + 2) * bs * hidden]
                    .copy_from_slice(&h_prev);
            }
        }
        (y, cache)
    }
}

fn to_time_major<T: Scalar>(x: &[T], bs: usize, t_len: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..bs {
        for t in 0..t_len {
            out[(t * bs + b) * d..(t * bs + b + 1) * d]
                .copy_from_slice(&x[(b * t_len + t) * d..(b * t_len + t + 1) * d]);
        }
    }
    out
}

fn from_time_major_acc<T: Scalar>(x_tm: &[T], bs: usize, t_len: usize, d: usize, out: &mut [T]) {
    for b in 0..bs {
        for t in 0..t_len {
            let src = &x_tm[(t * bs + b) * d..(t * bs + b + 1) * d];
            let dst = &mut out[(b * t_len + t) * d..(b * t_len + t + 1) * d];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += v;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn bilstm_backward<T: Scalar>(
    g: &Graph<T>,
    gy: &[T],
    x: Var,
    fwd: LstmParamVars,
    bwd: LstmParamVars,
    hidden: usize,
    cache: &LstmCache<T>,
    left: &mut [Option<Vec<T>>],
) {
    let (bs, t_len, d) = dims3(g.value(x), "bilstm input").expect("checked at forward");
    let h2 = 2 * hidden;

    // split the output gradient into per-direction time-major halves
    let mut dy_f = vec![T::zero(); t_len * bs * hidden];
    let mut dy_b = vec![T::zero(); t_len * bs * hidden];
    for b in 0..bs {
        for t in 0..t_len {
            let src = &gy[(b * t_len + t) * h2..(b * t_len + t + 1) * h2];
            dy_f[(t * bs + b) * hidden..(t * bs + b + 1) * hidden]
                .copy_from_slice(&src[..hidden]);
            dy_b[(t * bs + b) * hidden..(t * bs + b + 1) * hidden]
                .copy_from_slice(&src[hidden..]);
        }
    }

    let x_tm = to_time_major(&g.value(x).data, bs, t_len, d);
    let mut dx_tm = vec![T::zero(); bs * t_len * d];
    let needs_x = g.needs(x);
    backward_dir(g, &x_tm, &dy_f, fwd, &cache.fwd, bs, t_len, d, hidden, false, needs_x, &mut dx_tm, left);
    backward_dir(g, &x_tm, &dy_b, bwd, &cache.bwd, bs, t_len, d, hidden, true, needs_x, &mut dx_tm, left);

    if let Some(gx) = g.parent_grad(left, x) {
        from_time_major_acc(&dx_tm, bs, t_len, d, gx);
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_dir<T: Scalar>(
    g: &Graph<T>,
    x_tm: &[T],
    dy_tm: &[T],
    p: LstmParamVars,
    cache: &DirCache<T>,
    bs: usize,
    t_len: usize,
    d: usize,
    hidden: usize,
    reverse: bool,
    needs_x: bool,
    dx_tm: &mut [T],
    left: &mut [Option<Vec<T>>],
) {
    if !needs_x && !g.any_requires_grad(&[p.w_ih, p.w_hh, p.bias]) {
        return;
    }
    let h4 = 4 * hidden;
    let w_hh = &g.value(p.w_hh).data;
    let w_ih = &g.value(p.w_ih).data;
    assert!(!cache.gates.is_empty(), "bilstm backward without a forward cache");

    // pre-activation gradients aligned with time-major rows
    let mut dz_all = vec![T::zero(); t_len * bs * h4];
    let mut dwhh = vec![T::zero(); h4 * hidden];
    let mut dh_carry = vec![T::zero(); bs * hidden];
    let mut dc_carry = vec![T::zero(); bs * hidden];

    for s in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - s } else { s };
        let gates = &cache.gates[s * bs * h4..(s + 1) * bs * h4];
        let cells = &cache.cells[s * bs * hidden..(s + 1) * bs * hidden];
        let h_prev = &cache.hidden[s * bs * hidden..(s + 1) * bs * hidden];
        let dz_t = &mut dz_all[t * bs * h4..(t + 1) * bs * h4];
        for b in 0..bs {
            for j in 0..hidden {
                let gi = gates[b * h4 + j];
                let gf = gates[b * h4 + hidden + j];
                let gg = gates[b * h4 + 2 * hidden + j];
                let go = gates[b * h4 + 3 * hidden + j];
                let c = cells[b * hidden + j];
                let c_prev = if s > 0 {
                    cache.cells[(s - 1) * bs * hidden + b * hidden + j]
                } else {
                    T::zero()
                };
                let tc = c.tanh();
                let dh = dy_tm[(t * bs + b) * hidden + j] + dh_carry[b * hidden + j];
                let d_o = dh * tc;
                let dc = dc_carry[b * hidden + j] + dh * go * (T::one() - tc * tc);
                let di = dc * gg;
                let dg = dc * gi;
                let df = dc * c_prev;
                dc_carry[b * hidden + j] = dc * gf;
                dz_t[b * h4 + j] = di * gi * (T::one() - gi);
                dz_t[b * h4 + hidden + j] = df * gf * (T::one() - gf);
                dz_t[b * h4 + 2 * hidden + j] = dg * (T::one() - gg * gg);
                dz_t[b * h4 + 3 * hidden + j] = d_o * go * (T::one() - go);
            }
        }
        // dW_hh += dz_tᵀ · h_prev ; dh_carry = dz_t · W_hh
        let dz_t = &dz_all[t * bs * h4..(t + 1) * bs * h4];
        let dz_t_t = transpose(dz_t, bs, h4);
        matmul_acc(&dz_t_t, h_prev, h4, bs, hidden, &mut dwhh);
        dh_carry = matmul(dz_t, w_hh, bs, h4, hidden);
    }

    if let Some(gw) = g.parent_grad(left, p.w_hh) {
        for (o, v) in gw.iter_mut().zip(dwhh) {
            *o += v;
        }
    }
    if let Some(gb) = g.parent_grad(left, p.bias) {
        col_sums_acc(&dz_all, t_len * bs, h4, gb);
    }
    if let Some(gw) = g.parent_grad(left, p.w_ih) {
        let dz_t = transpose(&dz_all, t_len * bs, h4);
        matmul_acc(&dz_t, x_tm, h4, t_len * bs, d, gw);
    }
    if needs_x {
        matmul_acc(&dz_all, w_ih, t_len * bs, h4, d, dx_tm);
    }
}
