//! Seeded parameter initialization.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{Scalar, Tensor};

/// Generator used for every seeded draw in the crate.
pub type SeededRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Glorot/Xavier uniform: `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar>(
    rng: &mut SeededRng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-a..a))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Uniform `U(lo, hi)` tensor, used for test inputs.
pub fn uniform<T: Scalar>(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(lo..hi))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
