//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a derived
//! seed. Per-row streams use the ChaCha stream id, so row `i` draws the same
//! values no matter which thread processes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(seed, stream)`. Distinct streams give independent children.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Generator dedicated to one row of one domain.
pub fn row_rng(seed: u64, domain: u64, row: usize) -> ChaCha8Rng {
    let mut rng = stream_rng(seed, domain);
    rng.set_stream(row as u64);
    rng
}
