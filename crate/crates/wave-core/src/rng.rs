//! Seeded random streams and init distributions.
//!
//! Everything random in the crate flows through ChaCha8 seeded explicitly, so
//! a (seed, shape) pair always yields the same values. Sampled values are
//! quantized through f32 at the source; see Matrix::quantize_f32.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Matrix;

/// The crate-wide RNG. One stream per seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed from a base seed and a salt, so the
/// phases of a pipeline (init, shuffle, fit) get decoupled streams.
pub fn sub_seed(seed: u64, salt: &str) -> u64 {
    let mut x = seed ^ 0x9e3779b97f4a7c15;
    for b in salt.bytes() {
        x ^= b as u64;
        x = x.wrapping_mul(0x100000001b3);
        x ^= x >> 29;
    }
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 32;
    x
}

/// N(0, std^2) matrix, entries quantized through f32.
pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("std must be finite and nonnegative");
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = dist.sample(rng) as f32 as f64;
    }
    m
}

/// Truncated normal: N(0, std^2) resampled until |x| <= 2*std.
/// Entries quantized through f32.
pub fn trunc_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("std must be finite and nonnegative");
    let bound = 2.0 * std;
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        let x = loop {
            let s = dist.sample(rng);
            if s.abs() <= bound {
                break s;
            }
        };
        *v = x as f32 as f64;
    }
    m
}

/// Fisher-Yates shuffle of 0..n driven by the given stream.
pub fn shuffled_indices(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
