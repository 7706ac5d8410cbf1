//! Seed-derived random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed and derives
//! independent per-path generators with [`stream_rng`], so multi-path runs can
//! be parallelized over paths while staying bit-reproducible and independent
//! of the parallel schedule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for stream `stream` of master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Derived sub-seed for stream `stream` of `seed` (used where a routine
/// takes a bare seed rather than a generator).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(splitmix64(stream)))
}

/// Standard normal draw (Box-Muller, two uniforms per call).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // in (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Exponential waiting time with the given rate. Returns +inf for rate <= 0.
pub fn exponential<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = 1.0 - rng.gen::<f64>();
    -u.ln() / rate
}
