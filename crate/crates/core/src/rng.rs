//! Seeded random substreams.
//!
//! All randomness is derived from a master seed plus a small tuple of indices
//! (step, sample, purpose), so any draw can be regenerated independently of
//! evaluation order. This is what makes parallel generation and resumed
//! training bit-exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, path...)`.
pub fn substream(seed: u64, path: &[u64]) -> Rng {
    let mut h = splitmix64(seed);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Stream purposes, used as the first path element.
pub mod purpose {
    pub const SAMPLE: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const GUMBEL: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const SNR: u64 = 6;
    pub const JITTER: u64 = 7;
    pub const SPLIT: u64 = 8;
}
