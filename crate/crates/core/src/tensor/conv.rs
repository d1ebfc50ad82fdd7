//! 2-D cross-correlation (im2col + matmul) and the fixed kernel-3 1-D
//! convolution used by the sequence shortcut.

use super::{dims3, dims4, matmul, matmul_abt_acc, matmul_acc, transpose, Graph, Op, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let span = input + 2 * padding;
    if span < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded extent {span}"
        )));
    }
    let num = span - kernel;
    if num % stride != 0 {
        return Err(Error::shape(format!(
            "extent {input} with kernel {kernel}, stride {stride}, padding {padding} \
             gives a non-integral output size"
        )));
    }
    Ok(num / stride + 1)
}

/// Unrolls one `c×h×w` sample into a `(c·kh·kw) × (oh·ow)` patch matrix.
#[allow(clippy::too_many_arguments)]
pub(super) fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    let p = oh * ow;
    debug_assert_eq!(out.len(), c * kh * kw * p);
    let mut row = 0;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ui in 0..kh {
            for uj in 0..kw {
                let orow = &mut out[row * p..(row + 1) * p];
                let mut idx = 0;
                for oy in 0..oh {
                    let iy = (oy * stride + ui) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        for _ in 0..ow {
                            orow[idx] = T::zero();
                            idx += 1;
                        }
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + uj) as isize - pad as isize;
                        orow[idx] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            xrow[ix as usize]
                        };
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatters patch-matrix gradients back onto the input, accumulating where
/// receptive fields overlap.
#[allow(clippy::too_many_arguments)]
fn col2im_acc<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [T],
) {
    let p = oh * ow;
    let mut row = 0;
    for ci in 0..c {
        let dxc = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ui in 0..kh {
            for uj in 0..kw {
                let crow = &cols[row * p..(row + 1) * p];
                let mut idx = 0;
                for oy in 0..oh {
                    let iy = (oy * stride + ui) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        idx += ow;
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + uj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dxc[base + ix as usize] += crow[idx];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// 2-D cross-correlation of `x: B×C×H×W` with `w: K×C×kh×kw` plus a
    /// per-channel bias. Kernel extents must be odd.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (bs, cin, h, wd) = dims4(self.value(x), "conv2d input")?;
        let (k, cw, kh, kw) = dims4(self.value(w), "conv2d weight")?;
        if cw != cin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels, weight expects {cw}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!("conv2d kernel {kh}×{kw} must be odd")));
        }
        if stride == 0 {
            return Err(Error::config("conv2d stride must be positive"));
        }
        if self.value(b).shape != [k] {
            return Err(Error::shape(format!(
                "conv2d bias wants shape [{k}], got {:?}",
                self.value(b).shape
            )));
        }
        let oh = out_extent(h, kh, stride, padding)?;
        let ow = out_extent(wd, kw, stride, padding)?;
        let (ckk, p) = (cin * kh * kw, oh * ow);

        let requires_grad = self.any_requires_grad(&[x, w, b]);
        let mut cols = vec![T::zero(); bs * ckk * p];
        let mut out = vec![T::zero(); bs * k * p];
        {
            let xd = &self.value(x).data;
            let wdat = &self.nodes[w.0].tensor.data;
            let bd = &self.nodes[b.0].tensor.data;
            for bi in 0..bs {
                let colb = &mut cols[bi * ckk * p..(bi + 1) * ckk * p];
                im2col(&xd[bi * cin * h * wd..(bi + 1) * cin * h * wd], cin, h, wd, kh, kw, stride, padding, oh, ow, colb);
                let outb = &mut out[bi * k * p..(bi + 1) * k * p];
                matmul_acc(wdat, colb, k, ckk, p, outb);
                for (kk, orow) in outb.chunks_mut(p).enumerate() {
                    let bv = bd[kk];
                    for o in orow.iter_mut() {
                        *o += bv;
                    }
                }
            }
        }
        let mut t = Tensor::new(vec![bs, k, oh, ow], out)?;
        t.requires_grad = requires_grad;
        let cols = if requires_grad { Some(cols) } else { None };
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, padding, cols }))
    }

    /// Length-preserving 1-D convolution of `x: B×L×C` with `w: K×C×3`
    /// (kernel size fixed at 3, padding 1).
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bs, len, cin) = dims3(self.value(x), "conv1d input")?;
        let (k, cw, kt) = dims3(self.value(w), "conv1d weight")?;
        if kt != 3 {
            return Err(Error::shape(format!("conv1d kernel length is fixed at 3, got {kt}")));
        }
        if cw != cin {
            return Err(Error::shape(format!(
                "conv1d: input has {cin} channels, weight expects {cw}"
            )));
        }
        if self.value(b).shape != [k] {
            return Err(Error::shape(format!(
                "conv1d bias wants shape [{k}], got {:?}",
                self.value(b).shape
            )));
        }
        let mut out = vec![T::zero(); bs * len * k];
        {
            let xd = &self.value(x).data;
            let wd = &self.nodes[w.0].tensor.data;
            let bd = &self.nodes[b.0].tensor.data;
            for bi in 0..bs {
                let xb = &xd[bi * len * cin..(bi + 1) * len * cin];
                let ob = &mut out[bi * len * k..(bi + 1) * len * k];
                for l in 0..len {
                    let orow = &mut ob[l * k..(l + 1) * k];
                    for (kk, o) in orow.iter_mut().enumerate() {
                        let mut s = bd[kk];
                        for dt in 0..3usize {
                            let src = l as isize + dt as isize - 1;
                            if src < 0 || src >= len as isize {
                                continue;
                            }
                            let xrow = &xb[src as usize * cin..(src as usize + 1) * cin];
                            let wrow = &wd[kk * cin * 3..(kk + 1) * cin * 3];
                            for (c, &xv) in xrow.iter().enumerate() {
                                s += xv * wrow[c * 3 + dt];
                            }
                        }
                        *o = s;
                    }
                }
            }
        }
        let mut t = Tensor::new(vec![bs, len, k], out)?;
        t.requires_grad = self.any_requires_grad(&[x, w, b]);
        Ok(self.push(t, Op::Conv1d { x, w, b }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward<T: Scalar>(
    g: &Graph<T>,
    gy: &[T],
    out_shape: &[usize],
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
    padding: usize,
    cols: Option<&[T]>,
    left: &mut [Option<Vec<T>>],
) {
    let (bs, cin, h, wd) = dims4(g.value(x), "conv2d input").expect("checked at forward");
    let (k, _, kh, kw) = dims4(g.value(w), "conv2d weight").expect("checked at forward");
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let (ckk, p) = (cin * kh * kw, oh * ow);

    // The patch matrix is cached whenever the output participates in
    // differentiation; rebuild it otherwise.
    let rebuilt;
    let cols = match cols {
        Some(c) => c,
        None => {
            let mut buf = vec![T::zero(); bs * ckk * p];
            let xd = &g.value(x).data;
            for bi in 0..bs {
                im2col(
                    &xd[bi * cin * h * wd..(bi + 1) * cin * h * wd],
                    cin, h, wd, kh, kw, stride, padding, oh, ow,
                    &mut buf[bi * ckk * p..(bi + 1) * ckk * p],
                );
            }
            rebuilt = buf;
            &rebuilt
        }
    };

    if g.needs(w) {
        let mut dw = vec![T::zero(); k * ckk];
        for bi in 0..bs {
            matmul_abt_acc(
                &gy[bi * k * p..(bi + 1) * k * p],
                &cols[bi * ckk * p..(bi + 1) * ckk * p],
                k, p, ckk,
                &mut dw,
            );
        }
        let gw = g.parent_grad(left, w).unwrap();
        for (o, v) in gw.iter_mut().zip(dw) {
            *o += v;
        }
    }
    if let Some(gb) = g.parent_grad(left, b) {
        for bi in 0..bs {
            for (kk, orow) in gy[bi * k * p..(bi + 1) * k * p].chunks(p).enumerate() {
                let mut s = T::zero();
                for &v in orow {
                    s += v;
                }
                gb[kk] += s;
            }
        }
    }
    if g.needs(x) {
        let wt = transpose(&g.value(w).data, k, ckk);
        let mut dx = vec![T::zero(); bs * cin * h * wd];
        for bi in 0..bs {
            let dcols = matmul(&wt, &gy[bi * k * p..(bi + 1) * k * p], ckk, k, p);
            col2im_acc(
                &dcols,
                cin, h, wd, kh, kw, stride, padding, oh, ow,
                &mut dx[bi * cin * h * wd..(bi + 1) * cin * h * wd],
            );
        }
        let gx = g.parent_grad(left, x).unwrap();
        for (o, v) in gx.iter_mut().zip(dx) {
            *o += v;
        }
    }
}

pub(super) fn conv1d_backward<T: Scalar>(
    g: &Graph<T>,
    gy: &[T],
    x: Var,
    w: Var,
    b: Var,
    left: &mut [Option<Vec<T>>],
) {
    let (bs, len, cin) = dims3(g.value(x), "conv1d input").expect("checked at forward");
    let k = g.value(w).shape[0];

    if g.needs(w) {
        let xd = g.value(x).data.clone();
        let mut dw = vec![T::zero(); k * cin * 3];
        for bi in 0..bs {
            let xb = &xd[bi * len * cin..(bi + 1) * len * cin];
            let gyb = &gy[bi * len * k..(bi + 1) * len * k];
            for l in 0..len {
                let gyrow = &gyb[l * k..(l + 1) * k];
                for dt in 0..3usize {
                    let src = l as isize + dt as isize - 1;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let xrow = &xb[src as usize * cin..(src as usize + 1) * cin];
                    for (kk, &gv) in gyrow.iter().enumerate() {
                        let wrow = &mut dw[kk * cin * 3..(kk + 1) * cin * 3];
                        for (c, &xv) in xrow.iter().enumerate() {
                            wrow[c * 3 + dt] += gv * xv;
                        }
                    }
                }
            }
        }
        let gw = g.parent_grad(left, w).unwrap();
        for (o, v) in gw.iter_mut().zip(dw) {
            *o += v;
        }
    }
    if let Some(gb) = g.parent_grad(left, b) {
        for bi in 0..bs {
            for row in gy[bi * len * k..(bi + 1) * len * k].chunks(k) {
                for (o, &v) in gb.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
    }
    if g.needs(x) {
        let wd = g.value(w).data.clone();
        let mut dx = vec![T::zero(); bs * len * cin];
        for bi in 0..bs {
            let dxb = &mut dx[bi * len * cin..(bi + 1) * len * cin];
            let gyb = &gy[bi * len * k..(bi + 1) * len * k];
            for l in 0..len {
                let gyrow = &gyb[l * k..(l + 1) * k];
                for dt in 0..3usize {
                    let src = l as isize + dt as isize - 1;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let dxrow = &mut dxb[src as usize * cin..(src as usize + 1) * cin];
                    for (kk, &gv) in gyrow.iter().enumerate() {
                        let wrow = &wd[kk * cin * 3..(kk + 1) * cin * 3];
                        for (c, o) in dxrow.iter_mut().enumerate() {
                            *o += gv * wrow[c * 3 + dt];
                        }
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
