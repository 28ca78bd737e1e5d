#![allow(dead_code)]

pub mod fixtures;
pub mod lp;

use asgl::{Dataset, QuantileLevel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn q(t: f64) -> QuantileLevel {
    QuantileLevel::new(t).unwrap()
}

/// Gaussian-ish design with a sparse linear signal plus uniform noise.
pub fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
    let beta = DVector::from_fn(p, |j, _| if j % 3 == 0 { 1.0 + j as f64 * 0.1 } else { 0.0 });
    let noise = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
    let y = &x * beta + noise;
    Dataset::new(x, y).unwrap()
}
