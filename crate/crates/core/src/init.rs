//! Parameter initialisation.

use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// Normal sample with standard deviation `std`, redrawn until it lies within
/// two standard deviations of zero.
pub fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        if x.abs() <= 2.0 {
            return x * std;
        }
    }
}

/// Array filled with truncated-normal samples of std `fan_in^-1/2`.
pub fn fan_in_array<T, D, Sh, R>(rng: &mut R, shape: Sh, fan_in: usize) -> Array<T, D>
where
    T: Scalar,
    D: Dimension,
    Sh: ShapeBuilder<Dim = D>,
    R: Rng + ?Sized,
{
    let std = (fan_in.max(1) as f64).powf(-0.5);
    Array::from_shape_simple_fn(shape, || T::c(trunc_normal(rng, std)))
}
