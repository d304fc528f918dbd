//! Separable align-corners trilinear resampling of tube kernels.
//!
//! A kernel is stored as a `(k_t * k_h * k_w * C) x d` matrix, so each spatial
//! position owns a contiguous block of `C * d` values. Resampling mixes whole
//! blocks along one axis at a time.

use ndarray::Array2;

use crate::scalar::Scalar;
use crate::tube_config::Dims;

/// Source taps for one output position: `(i0, w0, i1, w1)`; `w1 == 0` when the
/// sample lands exactly on `i0`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Tap {
    i0: usize,
    w0: f64,
    i1: usize,
    w1: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src as f64 - 1.0) / 2.0
            } else {
                i as f64 * (src as f64 - 1.0) / (dst as f64 - 1.0)
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let frac = pos - i0 as f64;
            if frac == 0.0 || i0 + 1 >= src {
                Tap {
                    i0,
                    w0: 1.0,
                    i1: i0,
                    w1: 0.0,
                }
            } else {
                Tap {
                    i0,
                    w0: 1.0 - frac,
                    i1: i0 + 1,
                    w1: frac,
                }
            }
        })
        .collect()
}

/// Resamples along `axis` of a row-major `shape` grid of `inner`-sized blocks.
fn resample_axis<T: Scalar>(
    data: &[T],
    shape: Dims,
    inner: usize,
    axis: usize,
    len: usize,
) -> Vec<T> {
    let outer: usize = shape[..axis].iter().product();
    let after: usize = shape[axis + 1..].iter().product::<usize>() * inner;
    let taps = taps(shape[axis], len);
    let mut out = vec![T::zero(); outer * len * after];
    for o in 0..outer {
        for (i, tap) in taps.iter().enumerate() {
            let dst = &mut out[(o * len + i) * after..(o * len + i + 1) * after];
            let a = &data[(o * shape[axis] + tap.i0) * after..][..after];
            if tap.w1 == 0.0 {
                dst.copy_from_slice(a);
            } else {
                let b = &data[(o * shape[axis] + tap.i1) * after..][..after];
                let (w0, w1) = (T::c(tap.w0), T::c(tap.w1));
                for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
                    *d = w0 * x + w1 * y;
                }
            }
        }
    }
    out
}

/// Transpose of [`resample_axis`]: scatters `grad` (shaped with `len` along
/// `axis`) back onto a grid with `src` entries along that axis.
fn resample_axis_adjoint<T: Scalar>(
    grad: &[T],
    out_shape: Dims,
    inner: usize,
    axis: usize,
    src: usize,
) -> Vec<T> {
    let len = out_shape[axis];
    let outer: usize = out_shape[..axis].iter().product();
    let after: usize = out_shape[axis + 1..].iter().product::<usize>() * inner;
    let taps = taps(src, len);
    let mut out = vec![T::zero(); outer * src * after];
    for o in 0..outer {
        for (i, tap) in taps.iter().enumerate() {
            let g = &grad[(o * len + i) * after..][..after];
            let (w0, w1) = (T::c(tap.w0), T::c(tap.w1));
            let a = &mut out[(o * src + tap.i0) * after..][..after];
            for (d, &x) in a.iter_mut().zip(g) {
                *d = *d + w0 * x;
            }
            if tap.w1 != 0.0 {
                let b = &mut out[(o * src + tap.i1) * after..][..after];
                for (d, &x) in b.iter_mut().zip(g) {
                    *d = *d + w1 * x;
                }
            }
        }
    }
    out
}

/// Resizes a `base_shape` kernel with `channels` input channels to `target`.
///
/// Output position `i` along an axis of length `k` samples the base at
/// `i * (B - 1) / (k - 1)`, or at the middle `(B - 1) / 2` when `k == 1`.
pub fn interpolate_kernel<T: Scalar>(
    base: &Array2<T>,
    base_shape: Dims,
    channels: usize,
    target: Dims,
) -> Array2<T> {
    let d = base.ncols();
    let inner = channels * d;
    assert_eq!(
        base.nrows(),
        base_shape.iter().product::<usize>() * channels
    );
    let mut shape = base_shape;
    let mut data = base
        .as_standard_layout()
        .iter()
        .copied()
        .collect::<Vec<_>>();
    for axis in 0..3 {
        if shape[axis] != target[axis] {
            data = resample_axis(&data, shape, inner, axis, target[axis]);
            shape[axis] = target[axis];
        }
    }
    Array2::from_shape_vec((target.iter().product::<usize>() * channels, d), data)
        .expect("resampled kernel shape")
}

/// Gradient of a resized kernel pulled back to the base kernel.
pub fn interpolate_kernel_adjoint<T: Scalar>(
    grad: &Array2<T>,
    base_shape: Dims,
    channels: usize,
    target: Dims,
) -> Array2<T> {
    let d = grad.ncols();
    let inner = channels * d;
    let mut shape = target;
    let mut data = grad
        .as_standard_layout()
        .iter()
        .copied()
        .collect::<Vec<_>>();
    for axis in (0..3).rev() {
        if shape[axis] != base_shape[axis] {
            data = resample_axis_adjoint(&data, shape, inner, axis, base_shape[axis]);
            shape[axis] = base_shape[axis];
        }
    }
    Array2::from_shape_vec((base_shape.iter().product::<usize>() * channels, d), data)
        .expect("base kernel shape")
}
