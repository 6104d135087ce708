//! Layer kernels on flat row-major buffers.
//!
//! Every kernel is generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks. Backward
//! kernels accumulate parameter gradients (`+=`) and overwrite input
//! gradients.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Sub};

pub trait Scalar:
    Copy + Debug + Default + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + AddAssign
{
    fn zero() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// (channels, height, width).
pub type Dims = (usize, usize, usize);

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight interleaved partial sums (a fixed reduction
/// order, so results stay bitwise reproducible while vectorizing).
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + s
}

/// Valid output index range `[lo, hi)` for a tap offset `d` on an axis of
/// length `n` (input index = output index + d).
#[inline]
fn tap_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Unrolls same-padded `k x k` patches into a `[cin * k * k][h * w]` matrix.
fn im2col<T: Scalar>(x: &[T], (cin, h, w): Dims, k: usize, col: &mut Vec<T>) {
    let p = (k / 2) as isize;
    col.clear();
    col.resize(cin * k * k * h * w, T::zero());
    for ic in 0..cin {
        let xin = &x[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            let dy = ky as isize - p;
            let (y0, y1) = tap_range(h, dy);
            for kx in 0..k {
                let dx = kx as isize - p;
                let (x0, x1) = tap_range(w, dx);
                let row = &mut col[((ic * k + ky) * k + kx) * h * w..][..h * w];
                if x0 >= x1 {
                    continue;
                }
                for y in y0..y1 {
                    let src = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                    row[y * w + x0..y * w + x1].copy_from_slice(&xin[src..src + (x1 - x0)]);
                }
            }
        }
    }
}

/// Scatters a patch-matrix gradient back onto the input (adjoint of [`im2col`]).
fn col2im<T: Scalar>(col: &[T], (cin, h, w): Dims, k: usize, dx: &mut [T]) {
    let p = (k / 2) as isize;
    dx.iter_mut().for_each(|v| *v = T::zero());
    for ic in 0..cin {
        let dplane = &mut dx[ic * h * w..(ic + 1) * h * w];
        for ky in 0..k {
            let dy = ky as isize - p;
            let (y0, y1) = tap_range(h, dy);
            for kx in 0..k {
                let dxo = kx as isize - p;
                let (x0, x1) = tap_range(w, dxo);
                if x0 >= x1 {
                    continue;
                }
                let row = &col[((ic * k + ky) * k + kx) * h * w..][..h * w];
                for y in y0..y1 {
                    let dst = ((y as isize + dy) as usize) * w + (x0 as isize + dxo) as usize;
                    for (d, &v) in dplane[dst..dst + (x1 - x0)].iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Same-padded, stride-1 cross-correlation. Weights are laid out
/// `[out][in][ky][kx]`.
pub fn conv_forward<T: Scalar>(x: &[T], dims: Dims, weights: &[T], bias: &[T], k: usize, out: &mut [T]) {
    let (cin, h, w) = dims;
    let cout = bias.len();
    let r = cin * k * k;
    debug_assert_eq!(weights.len(), cout * r);
    debug_assert_eq!(out.len(), cout * h * w);
    let mut col = Vec::new();
    im2col(x, dims, k, &mut col);
    for oc in 0..cout {
        let plane = &mut out[oc * h * w..(oc + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = bias[oc]);
        for (j, &wv) in weights[oc * r..(oc + 1) * r].iter().enumerate() {
            axpy(wv, &col[j * h * w..(j + 1) * h * w], plane);
        }
    }
}

/// Gradients of [`conv_forward`]. `dx` is skipped when `None`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    x: &[T],
    dims: Dims,
    weights: &[T],
    k: usize,
    dout: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
) {
    let (cin, h, w) = dims;
    let cout = db.len();
    let r = cin * k * k;
    let hw = h * w;
    let mut col = Vec::new();
    im2col(x, dims, k, &mut col);
    for oc in 0..cout {
        let g = &dout[oc * hw..(oc + 1) * hw];
        let mut s = T::zero();
        for &v in g {
            s += v;
        }
        db[oc] += s;
        for j in 0..r {
            dw[oc * r + j] += dot(g, &col[j * hw..(j + 1) * hw]);
        }
    }
    if let Some(dx) = dx {
        col.iter_mut().for_each(|v| *v = T::zero());
        for oc in 0..cout {
            let g = &dout[oc * hw..(oc + 1) * hw];
            for j in 0..r {
                axpy(weights[oc * r + j], g, &mut col[j * hw..(j + 1) * hw]);
            }
        }
        col2im(&col, dims, k, dx);
    }
}

/// Affine map, weights laid out `[out][in]`.
pub fn fc_forward<T: Scalar>(x: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        *y = bias[o] + dot(&weights[o * n_in..(o + 1) * n_in], x);
    }
}

pub fn fc_backward<T: Scalar>(x: &[T], weights: &[T], dout: &[T], dx: Option<&mut [T]>, dw: &mut [T], db: &mut [T]) {
    let n_in = x.len();
    for (o, &g) in dout.iter().enumerate() {
        db[o] += g;
        axpy(g, x, &mut dw[o * n_in..(o + 1) * n_in]);
    }
    if let Some(dx) = dx {
        dx.iter_mut().for_each(|v| *v = T::zero());
        for (o, &g) in dout.iter().enumerate() {
            axpy(g, &weights[o * n_in..(o + 1) * n_in], dx);
        }
    }
}

pub fn relu_forward<T: Scalar>(x: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v > T::zero() { v } else { T::zero() };
    }
}

/// Passes the gradient where the input is nonnegative (subgradient 1 at 0).
pub fn relu_backward<T: Scalar>(x: &[T], dout: &[T], dx: &mut [T]) {
    for ((d, &g), &v) in dx.iter_mut().zip(dout).zip(x) {
        *d = if v >= T::zero() { g } else { T::zero() };
    }
}

/// Non-overlapping max pooling. Records the flat argmax of each window,
/// first index on ties.
pub fn maxpool_forward<T: Scalar>(x: &[T], (c, h, w): Dims, f: usize, out: &mut [T], argmax: &mut [usize]) {
    let (oh, ow) = (h / f, w / f);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = ch * h * w + oy * f * w + ox * f;
                for dy in 0..f {
                    for dx in 0..f {
                        let i = ch * h * w + (oy * f + dy) * w + ox * f + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                out[o] = x[best];
                argmax[o] = best;
            }
        }
    }
}

pub fn maxpool_backward<T: Scalar>(dout: &[T], argmax: &[usize], dx: &mut [T]) {
    dx.iter_mut().for_each(|v| *v = T::zero());
    for (&g, &i) in dout.iter().zip(argmax) {
        dx[i] += g;
    }
}

/// Elementwise scaling by a precomputed inverted-dropout mask
/// (entries 0 or `1 / (1 - rate)`).
pub fn dropout_apply<T: Scalar>(x: &[T], mask: &[T], out: &mut [T]) {
    for ((o, &v), &m) in out.iter_mut().zip(x).zip(mask) {
        *o = v * m;
    }
}

/// `block_out + block_in`, replicating a single-channel `block_in` across
/// every channel when `broadcast` is set.
pub fn shortcut_add<T: Scalar>(block_out: &[T], block_in: &[T], broadcast: bool, out: &mut [T]) {
    if broadcast {
        let plane = block_in.len();
        for (chunk_o, chunk_b) in out.chunks_mut(plane).zip(block_out.chunks(plane)) {
            for ((o, &b), &s) in chunk_o.iter_mut().zip(chunk_b).zip(block_in) {
                *o = b + s;
            }
        }
    } else {
        for ((o, &b), &s) in out.iter_mut().zip(block_out).zip(block_in) {
            *o = b + s;
        }
    }
}

/// Gradient reaching the shortcut input: identity, or a channel sum when
/// the input was broadcast.
pub fn shortcut_input_grad<T: Scalar>(dout: &[T], broadcast: bool, plane: usize) -> Vec<T> {
    if broadcast {
        let mut g = vec![T::zero(); plane];
        for chunk in dout.chunks(plane) {
            for (a, &b) in g.iter_mut().zip(chunk) {
                *a += b;
            }
        }
        g
    } else {
        dout.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_kernel_on_two_by_two() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let mut out = [0.0; 4];
        conv_forward(&x, (1, 2, 2), &[1.0; 9], &[0.0], 3, &mut out);
        assert_eq!(out, [10.0; 4]);
    }

    #[test]
    fn delta_and_zero_kernels() {
        let x: Vec<f32> = (0..25).map(|v| v as f32 * 0.5 - 3.0).collect();
        let mut delta = vec![0.0f32; 9];
        delta[4] = 1.0;
        let mut out = vec![0.0f32; 25];
        conv_forward(&x, (1, 5, 5), &delta, &[0.0], 3, &mut out);
        assert_eq!(out, x);
        conv_forward(&x, (1, 5, 5), &[0.0; 9], &[0.0], 3, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_examples() {
        let mut out = [9.0f32; 3];
        relu_forward(&[-1.0, 0.0, 2.0], &mut out);
        assert_eq!(out, [0.0, 0.0, 2.0]);
        let mut dx = [9.0f32; 3];
        relu_backward(&[-1.0, 0.0, 2.0], &[1.0, 1.0, 1.0], &mut dx);
        assert_eq!(dx, [0.0, 1.0, 1.0]);
    }

    #[test]
    fn maxpool_examples() {
        let mut out = [0.0f32];
        let mut am = [0usize];
        maxpool_forward(&[1.0, 2.0, 3.0, 4.0], (1, 2, 2), 2, &mut out, &mut am);
        assert_eq!((out[0], am[0]), (4.0, 3));
        // ties route to the first index
        maxpool_forward(&[5.0, 5.0, 5.0, 5.0], (1, 2, 2), 2, &mut out, &mut am);
        assert_eq!(am[0], 0);
        let mut dx = [9.0f32; 4];
        maxpool_backward(&[2.0], &am, &mut dx);
        assert_eq!(dx, [2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fc_identity_and_bias() {
        let x = [1.5f32, -2.0, 0.25];
        let eye = [1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mut out = [0.0f32; 3];
        fc_forward(&x, &eye, &[0.0; 3], &mut out);
        assert_eq!(out, x);
        fc_forward(&x, &[0.0; 9], &[0.5, 1.0, -1.0], &mut out);
        assert_eq!(out, [0.5, 1.0, -1.0]);
    }

    #[test]
    fn broadcast_shortcut() {
        let block_in = [1.0f32, 2.0];
        let mut out = [0.0f32; 6];
        shortcut_add(&[0.0; 6], &block_in, true, &mut out);
        assert_eq!(out, [1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(shortcut_input_grad(&[1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0], true, 2), vec![9.0, 12.0]);
    }
}
