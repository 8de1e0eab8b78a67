//! Deterministic random streams derived from the global run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a path of stream labels into a single 64-bit seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix(seed), |acc, &label| {
        splitmix(acc ^ splitmix(label))
    })
}

/// Independent ChaCha stream for `(seed, labels...)`.
pub fn stream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}

/// Stream labels used across the crate, kept in one place so streams never collide.
pub mod label {
    pub const ISLAND: u64 = 1;
    pub const SEEDING: u64 = 2;
    pub const MOCK_BACKEND: u64 = 3;
    pub const KMEANS: u64 = 4;
}
