//! Deterministic RNG stream derivation.
//!
//! Every random decision in a run is drawn from a stream derived from the
//! master seed plus a domain tag (and optional ids such as vehicle or round).
//! Streams for different purposes never share state, so e.g. the selection
//! policy cannot perturb the traffic or the data generation. This is what
//! makes cross-policy comparisons share identical environments per seed.

use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

/// Domain tags for the independent streams of one run.
pub mod domain {
    pub const INITIAL_FLEET: u64 = 1;
    pub const ARRIVALS: u64 = 2;
    pub const DATA: u64 = 3;
    pub const TRAINING: u64 = 4;
    pub const POLICY: u64 = 5;
    pub const FADING: u64 = 6;
    pub const THEORY: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a reproducible stream from the master seed and a tag path.
///
/// The same `(master_seed, tags)` always yields the same stream, on every
/// platform; distinct tag paths yield statistically independent streams.
pub fn stream(master_seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut state = splitmix64(master_seed);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag.wrapping_add(0xa076_1d64_78bd_642f)));
    }
    ChaCha12Rng::seed_from_u64(state)
}
