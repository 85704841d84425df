//! Seeded random streams.
//!
//! Every parallel unit of work (a tree, a k-means restart, a CV fold) draws
//! from its own ChaCha stream keyed by (master seed, purpose, index), so
//! results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Distinct purposes get distinct stream namespaces.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub(crate) enum Purpose {
    Tree = 1,
    Folds = 2,
    KMeans = 4,
    Synth = 5,
}

pub(crate) fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ index);
    rng
}

/// SplitMix64 finaliser, used to derive child seeds.
pub(crate) fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for an independent sub-computation, e.g. one size group.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix(seed, salt)
}
