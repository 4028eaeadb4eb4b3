//! Portable random sampling.
//!
//! Every random draw in the crate comes from `ChaCha8Rng::seed_from_u64(seed)`
//! (the ChaCha stream cipher with 8 rounds; `seed_from_u64` expands the seed
//! with PCG32 as documented by `rand_core`). Only two primitives consume the
//! stream, so other implementations can reproduce instances exactly:
//!
//! * [`uniform`]: one `u64`, `(u >> 11) * 2^-53`, in `[0, 1)`.
//! * [`normal`]: Box-Muller on two uniforms `u1, u2` (in that order),
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`; the sine branch is discarded.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Index in `0..n` from one uniform draw.
pub fn index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    ((uniform(rng) * n as f64) as usize).min(n - 1)
}
