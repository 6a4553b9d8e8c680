//! Seed derivation and the simulator noise recipe.
//!
//! Every simulator call receives a single `u64` seed. Noise is produced from
//! that seed with SplitMix64 followed by a Box–Muller step, so out-of-process
//! plugins written in any language can reproduce builtin observations exactly:
//!
//! ```text
//! state <- seed
//! next():   state += 0x9E3779B97F4A7C15 (wrapping)
//!           z = state
//!           z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!           z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!           return z ^ (z >> 31)
//! uniform(): (next() >> 11) * 2^-53                 in [0, 1)
//! normal():  u1 = 1 - uniform(); u2 = uniform()
//!            return sqrt(-2 ln u1) * cos(2 pi u2)
//! ```
//!
//! Only the cosine branch is used; each normal draw consumes two words.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// General-purpose generator used for sampling, minibatching and initialization.
pub type RngState = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 stream seeded by a single word.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via the cosine branch of Box–Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Derives a child seed from a base seed and a path of integers, e.g.
/// `(run_seed, round, sample_index)`. Order-sensitive.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = mix(base ^ 0x6A09_E667_F3BC_C908);
    for &p in path {
        h = mix(h.wrapping_add(GOLDEN) ^ mix(p.wrapping_add(0xA54F_F53A_5F1D_36F1)));
    }
    h
}

/// A ChaCha stream for a derived seed.
pub fn rng_for(base: u64, path: &[u64]) -> RngState {
    RngState::seed_from_u64(derive_seed(base, path))
}

/// Stream tags used when deriving seeds, so that distinct consumers of the same
/// round never share a stream.
pub mod tag {
    pub const TRAINING_SET: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const UTILITY: u64 = 3;
    pub const ACTION: u64 = 4;
    pub const POSTERIOR: u64 = 5;
    pub const ENVIRONMENT: u64 = 6;
    pub const METRICS: u64 = 7;
    pub const MARGINAL: u64 = 8;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Published SplitMix64 outputs for seed 1234567.
        let mut g = SplitMix64::new(1234567);
        let expected = [
            6457827717110365317u64,
            3203168211198807973,
            9817491932198370423,
            4593380528125082431,
            16408922859458223821,
        ];
        for e in expected {
            assert_eq!(g.next_u64(), e);
        }
    }

    #[test]
    fn normal_moments() {
        let mut g = SplitMix64::new(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn derived_seeds_differ_by_path() {
        let a = derive_seed(1, &[0, 1]);
        let b = derive_seed(1, &[1, 0]);
        let c = derive_seed(2, &[0, 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, &[0, 1]));
    }
}
