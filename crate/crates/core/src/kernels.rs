//! Raw compute loops over contiguous slices. Every reduction runs in a fixed
//! order, so results are bit-reproducible.

use crate::error::TensorError;
use crate::tensor::Real;

/// 64-bit runs are for verification, where finite differences need the
/// smallest attainable rounding noise, so their reductions are compensated.
#[inline]
fn compensated<T: Real>() -> bool {
    T::BITS == 64
}

/// Neumaier's running-error update: adds `x` to `*s`, collecting the lost
/// low-order bits in `*e`.
#[inline]
fn two_sum<T: Real>(s: &mut T, e: &mut T, x: T) {
    let t = *s + x;
    *e = *e + if s.abs() >= x.abs() { (*s - t) + x } else { (x - t) + *s };
    *s = t;
}

/// `c[m,n] += a[m,k] * b[k,n]`
pub fn gemm_nn<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    if compensated::<T>() {
        let mut err = vec![T::zero(); n];
        for i in 0..m {
            err.fill(T::zero());
            let c_row = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let a_ip = a[i * k + p];
                if a_ip == T::zero() {
                    continue;
                }
                let b_row = &b[p * n..(p + 1) * n];
                for ((cv, ev), &bv) in c_row.iter_mut().zip(err.iter_mut()).zip(b_row) {
                    two_sum(cv, ev, a_ip * bv);
                }
            }
            for (cv, &ev) in c_row.iter_mut().zip(&err) {
                *cv = *cv + ev;
            }
        }
        return;
    }
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + a_ip * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub fn gemm_nt<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            if compensated::<T>() {
                let (mut acc, mut e) = (c[i * n + j], T::zero());
                for (&av, &bv) in a_row.iter().zip(b_row) {
                    two_sum(&mut acc, &mut e, av * bv);
                }
                c[i * n + j] = acc + e;
                continue;
            }
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            c[i * n + j] = c[i * n + j] + acc;
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
pub fn gemm_tn<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    if compensated::<T>() {
        let mut err = vec![T::zero(); m * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            for i in 0..m {
                let a_pi = a[p * m + i];
                if a_pi == T::zero() {
                    continue;
                }
                let c_row = &mut c[i * n..(i + 1) * n];
                let e_row = &mut err[i * n..(i + 1) * n];
                for ((cv, ev), &bv) in c_row.iter_mut().zip(e_row.iter_mut()).zip(b_row) {
                    two_sum(cv, ev, a_pi * bv);
                }
            }
        }
        for (cv, &ev) in c.iter_mut().zip(&err) {
            *cv = *cv + ev;
        }
        return;
    }
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a[p * m + i];
            if a_pi == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + a_pi * bv;
            }
        }
    }
}

/// Geometry of a 2-D cross-correlation from a `[channels, h, w]` plane stack
/// to `[_, out_h, out_w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        op: &'static str,
        channels: usize,
        (h, w): (usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op,
                msg: "stride must be positive".into(),
            });
        }
        if kh == 0 || kw == 0 {
            return Err(TensorError::InvalidArgument {
                op,
                msg: "kernel extents must be positive".into(),
            });
        }
        if h + 2 * pad < kh {
            return Err(TensorError::ShapeMismatch {
                op,
                axis: "height",
                expected: kh,
                found: h + 2 * pad,
            });
        }
        if w + 2 * pad < kw {
            return Err(TensorError::ShapeMismatch {
                op,
                axis: "width",
                expected: kw,
                found: w + 2 * pad,
            });
        }
        Ok(Self {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Rows of the column matrix: `channels * kh * kw`.
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input row/column touched by output position `o` and kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds one sample `[channels, h, w]` into `cols[channels*kh*kw, out_h*out_w]`.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.channels {
        let x_c = &x[c * g.in_plane()..(c + 1) * g.in_plane()];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oi in 0..g.out_h {
                    let dst_row = &mut dst[oi * g.out_w..(oi + 1) * g.out_w];
                    match g.src(oi, ki, g.h) {
                        None => dst_row.fill(T::zero()),
                        Some(ii) => {
                            for (oj, d) in dst_row.iter_mut().enumerate() {
                                *d = match g.src(oj, kj, g.w) {
                                    Some(jj) => x_c[ii * g.w + jj],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `dx`.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.channels {
        let dx_c = &mut dx[c * g.in_plane()..(c + 1) * g.in_plane()];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oi in 0..g.out_h {
                    let Some(ii) = g.src(oi, ki, g.h) else { continue };
                    for oj in 0..g.out_w {
                        if let Some(jj) = g.src(oj, kj, g.w) {
                            let d = &mut dx_c[ii * g.w + jj];
                            *d = *d + src[oi * g.out_w + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Per-batch conv2d forward. `x` is `[n, cin, h, w]`, `w` is `[cout, cin*kh*kw]`.
pub fn conv2d_forward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: &[T],
    cout: usize,
) -> Vec<T> {
    let k = g.col_rows();
    let p = g.out_plane();
    let in_sz = g.channels * g.in_plane();
    let mut out = vec![T::zero(); n * cout * p];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for s in 0..n {
        let xs = &x[s * in_sz..(s + 1) * in_sz];
        let ys = &mut out[s * cout * p..(s + 1) * cout * p];
        for (co, &bv) in bias.iter().enumerate() {
            ys[co * p..(co + 1) * p].fill(bv);
        }
        if g.is_pointwise() {
            gemm_nn(cout, p, k, weight, xs, ys);
        } else {
            im2col(xs, g, &mut cols);
            gemm_nn(cout, p, k, weight, &cols, ys);
        }
    }
    out
}

/// Which conv2d input gradients to compute.
#[derive(Debug)]
pub struct ConvGrads<'a, T> {
    pub dx: Option<&'a mut [T]>,
    pub dw: Option<&'a mut [T]>,
    pub db: Option<&'a mut [T]>,
}

pub fn conv2d_backward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    cout: usize,
    dy: &[T],
    grads: ConvGrads<'_, T>,
) {
    let ConvGrads { mut dx, mut dw, db } = grads;
    let k = g.col_rows();
    let p = g.out_plane();
    let in_sz = g.channels * g.in_plane();
    if let Some(db) = db {
        for s in 0..n {
            for (co, d) in db.iter_mut().enumerate() {
                let off = (s * cout + co) * p;
                *d = *d + dy[off..off + p].iter().copied().sum();
            }
        }
    }
    let mut cols = vec![T::zero(); k * p];
    for s in 0..n {
        let dys = &dy[s * cout * p..(s + 1) * cout * p];
        if let Some(dw) = dw.as_deref_mut() {
            let xs = &x[s * in_sz..(s + 1) * in_sz];
            if g.is_pointwise() {
                gemm_nt(cout, k, p, dys, xs, dw);
            } else {
                im2col(xs, g, &mut cols);
                gemm_nt(cout, k, p, dys, &cols, dw);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[s * in_sz..(s + 1) * in_sz];
            if g.is_pointwise() {
                gemm_tn(k, p, cout, weight, dys, dxs);
            } else {
                cols.fill(T::zero());
                gemm_tn(k, p, cout, weight, dys, &mut cols);
                col2im(&cols, g, dxs);
            }
        }
    }
}

/// Transposed convolution forward. `g` describes the *adjoint* conv2d: from
/// the output plane `[cout, out_h', out_w']` down to the input `[cin, h, w]`.
/// `weight` is `[cin, cout*kh*kw]`.
pub fn conv_transpose2d_forward<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let k = g.col_rows();
    let p = g.out_plane();
    let cout = g.channels;
    let out_sz = cout * g.in_plane();
    let mut out = vec![T::zero(); n * out_sz];
    let mut cols = vec![T::zero(); k * p];
    for s in 0..n {
        let xs = &x[s * cin * p..(s + 1) * cin * p];
        let ys = &mut out[s * out_sz..(s + 1) * out_sz];
        cols.fill(T::zero());
        gemm_tn(k, p, cin, weight, xs, &mut cols);
        col2im(&cols, g, ys);
        for (co, &bv) in bias.iter().enumerate() {
            for v in &mut ys[co * g.in_plane()..(co + 1) * g.in_plane()] {
                *v = *v + bv;
            }
        }
    }
    out
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    g: &ConvGeom,
    weight: &[T],
    dy: &[T],
    grads: ConvGrads<'_, T>,
) {
    let ConvGrads { mut dx, mut dw, db } = grads;
    let k = g.col_rows();
    let p = g.out_plane();
    let cout = g.channels;
    let out_sz = cout * g.in_plane();
    if let Some(db) = db {
        for s in 0..n {
            for (co, d) in db.iter_mut().enumerate() {
                let off = s * out_sz + co * g.in_plane();
                *d = *d + dy[off..off + g.in_plane()].iter().copied().sum();
            }
        }
    }
    if dx.is_none() && dw.is_none() {
        return;
    }
    let mut cols = vec![T::zero(); k * p];
    for s in 0..n {
        im2col(&dy[s * out_sz..(s + 1) * out_sz], g, &mut cols);
        if let Some(dx) = dx.as_deref_mut() {
            gemm_nn(cin, p, k, weight, &cols, &mut dx[s * cin * p..(s + 1) * cin * p]);
        }
        if let Some(dw) = dw.as_deref_mut() {
            gemm_nt(cin, k, p, &x[s * cin * p..(s + 1) * cin * p], &cols, dw);
        }
    }
}

/// Maps an output index of `pixel_shuffle` to its input index.
/// `out[n, c, h*r+a, w*r+b] = x[n, c*r*r + a*r + b, h, w]`.
pub fn pixel_shuffle_index(
    (c_out, h, w): (usize, usize, usize),
    r: usize,
) -> impl Iterator<Item = usize> {
    let (oh, ow) = (h * r, w * r);
    (0..c_out).flat_map(move |c| {
        (0..oh).flat_map(move |i| {
            (0..ow).map(move |j| {
                let (hh, a) = (i / r, i % r);
                let (ww, b) = (j / r, j % r);
                ((c * r * r + a * r + b) * h + hh) * w + ww
            })
        })
    })
}

/// Nearest-neighbour source index of every output element, per sample-channel plane.
pub fn upsample_index((h, w): (usize, usize), f: usize) -> impl Iterator<Item = usize> {
    (0..h * f).flat_map(move |i| (0..w * f).map(move |j| (i / f) * w + j / f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mm(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, n, k) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let want = naive_mm(m, n, k, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, n, k, &a, &b, &mut c);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-14));

        let mut c = vec![0.0; m * n];
        gemm_nt(m, n, k, &a, &transpose(k, n, &b), &mut c);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-14));

        let mut c = vec![0.0; m * n];
        gemm_tn(m, n, k, &transpose(m, k, &a), &b, &mut c);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new("t", 2, (5, 4), (3, 2), 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.out_plane())
            .map(|i| (i as f64 * 1.3).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn geometry_rejects_small_input() {
        let err = ConvGeom::new("conv2d", 1, (2, 5), (3, 3), 1, 0).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { axis: "height", .. }));
        assert!(ConvGeom::new("conv2d", 1, (2, 5), (3, 3), 1, 1).is_ok());
    }
}
