//! Deterministic derivation of independent random streams.
//!
//! Every stochastic component owns a `ChaCha8Rng` seeded by mixing the
//! experiment master seed with stream tags, so results do not depend on
//! thread scheduling or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Namespace tag for per-client per-round local-update streams.
pub const STREAM_LOCAL_UPDATE: u64 = 1;
/// Namespace tag for per-producer data-generation streams.
pub const STREAM_PRODUCER: u64 = 2;
/// Namespace tag for per-run Monte Carlo streams.
pub const STREAM_RUN: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with stream tags into a single sub-seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag));
    }
    state
}

/// A fresh random stream for `(master, tags)`.
pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
