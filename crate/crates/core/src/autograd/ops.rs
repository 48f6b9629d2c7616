//! Layer kernels and their vector-Jacobian products.
//!
//! All kernels work on flat row-major slices. Every output element is
//! accumulated from a zero start in ascending order of the contracted index
//! and the bias is added last, so results are bit-reproducible.

use super::tensor::Real;

/// Affine map `y = x W + b` with `x: [batch, inp]`, `W: [inp, out]`.
///
/// `w_t` is the transpose of `w` (`[out, inp]`), used only by the backward
/// pass; callers that do not need `dx` may skip building it.
pub fn dense_forward<T: Real>(
    x: &[T],
    batch: usize,
    inp: usize,
    w: &[T],
    bias: &[T],
    out: usize,
) -> Vec<T> {
    debug_assert_eq!(x.len(), batch * inp);
    debug_assert_eq!(w.len(), inp * out);
    let mut y = vec![T::zero(); batch * out];
    for i in 0..batch {
        let xr = &x[i * inp..(i + 1) * inp];
        let yr = &mut y[i * out..(i + 1) * out];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let wr = &w[k * out..(k + 1) * out];
            for (yv, &wv) in yr.iter_mut().zip(wr) {
                *yv = *yv + xv * wv;
            }
        }
        for (yv, &b) in yr.iter_mut().zip(bias) {
            *yv = *yv + b;
        }
    }
    y
}

/// Backward of [`dense_forward`]. Accumulates into `dw` / `db` and returns
/// `dx` when `w_t` is provided.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    batch: usize,
    inp: usize,
    w_t: Option<&[T]>,
    out: usize,
    gy: &[T],
    dw: &mut [T],
    db: &mut [T],
) -> Option<Vec<T>> {
    debug_assert_eq!(gy.len(), batch * out);
    for i in 0..batch {
        let xr = &x[i * inp..(i + 1) * inp];
        let gr = &gy[i * out..(i + 1) * out];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let dwr = &mut dw[k * out..(k + 1) * out];
            for (d, &g) in dwr.iter_mut().zip(gr) {
                *d = *d + xv * g;
            }
        }
        for (d, &g) in db.iter_mut().zip(gr) {
            *d = *d + g;
        }
    }
    w_t.map(|w_t| {
        let mut dx = vec![T::zero(); batch * inp];
        for i in 0..batch {
            let gr = &gy[i * out..(i + 1) * out];
            let dxr = &mut dx[i * inp..(i + 1) * inp];
            for (j, &g) in gr.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                let wr = &w_t[j * inp..(j + 1) * inp];
                for (d, &wv) in dxr.iter_mut().zip(wr) {
                    *d = *d + g * wv;
                }
            }
        }
        dx
    })
}

/// Transpose a row-major `[rows, cols]` matrix.
pub fn transpose<T: Real>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// Geometry of a 2-D convolution over NCHW input with `[cout, cin, kh, kw]`
/// weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kh * self.kw
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.out_h() * self.out_w()
    }

    /// Checks positivity and that the kernel fits inside the padded input.
    pub fn validate(&self) -> Result<(), String> {
        let dims = [self.cin, self.cout, self.kh, self.kw, self.stride, self.h, self.w];
        if dims.contains(&0) {
            return Err(format!("non-positive convolution dimension in {self:?}"));
        }
        if self.kh > self.h + 2 * self.pad || self.kw > self.w + 2 * self.pad {
            return Err(format!(
                "kernel {}x{} larger than padded input {}x{}",
                self.kh,
                self.kw,
                self.h + 2 * self.pad,
                self.w + 2 * self.pad
            ));
        }
        Ok(())
    }

    /// Output rows `oh` for which input row `oh*stride + k - pad` is in range.
    fn valid_range(&self, k: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let (s, pad) = (self.stride as i64, self.pad as i64);
        let k = k as i64;
        let lo = if pad > k { (pad - k + s - 1) / s } else { 0 };
        let hi_num = extent as i64 - 1 + pad - k;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_extent as i64);
        (lo as usize, (hi.max(lo)) as usize)
    }
}

pub fn conv2d_forward<T: Real>(x: &[T], batch: usize, g: &ConvGeom, w: &[T], bias: &[T]) -> Vec<T> {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let plane = oh_n * ow_n;
    let mut y = vec![T::zero(); batch * g.cout * plane];
    for n in 0..batch {
        let xn = &x[n * g.in_len()..(n + 1) * g.in_len()];
        for co in 0..g.cout {
            let yp = &mut y[(n * g.cout + co) * plane..(n * g.cout + co + 1) * plane];
            for ci in 0..g.cin {
                let xp = &xn[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid_range(ky, g.h, oh_n);
                    for kx in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox0, ox1) = g.valid_range(kx, g.w, ow_n);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let yr = &mut yp[oy * ow_n..(oy + 1) * ow_n];
                            let xr = &xp[iy * g.w..(iy + 1) * g.w];
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.pad;
                                yr[ox] = yr[ox] + wv * xr[ix];
                            }
                        }
                    }
                }
            }
            let b = bias[co];
            yp.iter_mut().for_each(|v| *v = *v + b);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    gy: &[T],
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let plane = oh_n * ow_n;
    let mut dx = need_dx.then(|| vec![T::zero(); batch * g.in_len()]);
    for n in 0..batch {
        let xn = &x[n * g.in_len()..(n + 1) * g.in_len()];
        for co in 0..g.cout {
            let gp = &gy[(n * g.cout + co) * plane..(n * g.cout + co + 1) * plane];
            db[co] = gp.iter().fold(db[co], |acc, &v| acc + v);
            for ci in 0..g.cin {
                let xp = &xn[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                for ky in 0..g.kh {
                    let (oy0, oy1) = g.valid_range(ky, g.h, oh_n);
                    for kx in 0..g.kw {
                        let widx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                        let (ox0, ox1) = g.valid_range(kx, g.w, ow_n);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let gr = &gp[oy * ow_n..(oy + 1) * ow_n];
                            let xr = &xp[iy * g.w..(iy + 1) * g.w];
                            for ox in ox0..ox1 {
                                acc = acc + gr[ox] * xr[ox * g.stride + kx - g.pad];
                            }
                        }
                        dw[widx] = dw[widx] + acc;
                        if let Some(dx) = dx.as_mut() {
                            let wv = w[widx];
                            if wv == T::zero() {
                                continue;
                            }
                            let base = n * g.in_len() + ci * g.h * g.w;
                            for oy in oy0..oy1 {
                                let iy = oy * g.stride + ky - g.pad;
                                let gr = &gp[oy * ow_n..(oy + 1) * ow_n];
                                let dxr = &mut dx[base + iy * g.w..base + (iy + 1) * g.w];
                                for ox in ox0..ox1 {
                                    let ix = ox * g.stride + kx - g.pad;
                                    dxr[ix] = dxr[ix] + wv * gr[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

pub fn relu_forward<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Gradient is passed where the input was strictly positive.
pub fn relu_backward<T: Real>(x: &[T], gy: &[T]) -> Vec<T> {
    x.iter()
        .zip(gy)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        (self.h - self.k) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w - self.k) / self.stride + 1
    }
    pub fn validate(&self) -> Result<(), String> {
        if [self.channels, self.h, self.w, self.k, self.stride].contains(&0) {
            return Err(format!("non-positive pooling dimension in {self:?}"));
        }
        if self.k > self.h || self.k > self.w {
            return Err(format!("pool window {} larger than input {}x{}", self.k, self.h, self.w));
        }
        Ok(())
    }
}

/// Max pooling without padding. Returns the pooled values and, per output,
/// the flat input index that won (first maximum in scan order).
pub fn maxpool_forward<T: Real>(x: &[T], batch: usize, g: &PoolGeom) -> (Vec<T>, Vec<usize>) {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let n_out = batch * g.channels * oh_n * ow_n;
    let mut y = Vec::with_capacity(n_out);
    let mut arg = Vec::with_capacity(n_out);
    for nc in 0..batch * g.channels {
        let base = nc * g.h * g.w;
        for oy in 0..oh_n {
            for ox in 0..ow_n {
                let mut best = base + oy * g.stride * g.w + ox * g.stride;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let idx = base + (oy * g.stride + ky) * g.w + ox * g.stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<T: Real>(argmax: &[usize], gy: &[T], in_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); in_len];
    for (&i, &g) in argmax.iter().zip(gy) {
        dx[i] = dx[i] + g;
    }
    dx
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn softmax_cross_entropy<T: Real>(
    logits: &[T],
    batch: usize,
    classes: usize,
    labels: &[usize],
) -> (T, Vec<T>) {
    let inv_b = T::one() / T::from_f64(batch as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); batch * classes];
    for i in 0..batch {
        let z = &logits[i * classes..(i + 1) * classes];
        let m = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = z.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss = loss + (lse - z[labels[i]]);
        let gr = &mut grad[i * classes..(i + 1) * classes];
        for (c, gv) in gr.iter_mut().enumerate() {
            let p = (z[c] - lse).exp();
            let y = if c == labels[i] { T::one() } else { T::zero() };
            *gv = (p - y) * inv_b;
        }
    }
    (loss * inv_b, grad)
}
