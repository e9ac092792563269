//! Seeded randomness.
//!
//! All randomness in the workspace comes from SplitMix64 (64-bit state;
//! `state += 0x9e3779b97f4a7c15`, output mixed with the two multipliers
//! `0xbf58476d1ce4e5b9` and `0x94d049bb133111eb`). Independent streams are
//! derived from `(seed, stream)` so parallel and serial consumers see the
//! same numbers.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Normal};
pub use rand_xoshiro::SplitMix64;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Generator for stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> SplitMix64 {
    let a = seeded(seed).next_u64();
    let b = seeded(stream ^ 0x5851_f42d_4c95_7f2d).next_u64();
    seeded(a ^ b.rotate_left(17))
}

/// Uniform in [0, 1) with 53 random bits.
pub fn uniform(rng: &mut SplitMix64) -> f64 {
    rng.random::<f64>()
}

pub fn normal_tensor<T: Scalar>(rng: &mut SplitMix64, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

/// Fisher-Yates shuffle.
pub fn shuffle<X>(rng: &mut SplitMix64, items: &mut [X]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
