//! Deterministic random-number streams.
//!
//! Every consumer of randomness derives its own stream from a master seed
//! plus a list of integer tags (sample index, iteration number, purpose).
//! Streams are therefore independent of evaluation order and of how many
//! draws other consumers make, which is what makes training resumable
//! bit-for-bit from a checkpoint.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; scrambles one 64-bit word.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a sequence of tags into a single derived seed.
///
/// The chain is order-sensitive: `derive_seed(s, &[1, 2])` and
/// `derive_seed(s, &[2, 1])` differ.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &t in tags {
        state = splitmix64(state ^ t.wrapping_mul(0x2545_f491_4f6c_dd1d));
    }
    state
}

/// A ChaCha8 stream keyed by the master seed and tags.
pub fn stream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, &[1, 2, 3]);
        let b = derive_seed(7, &[1, 2, 3]);
        assert_eq!(a, b);
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[0]), derive_seed(8, &[0]));
        assert_ne!(derive_seed(7, &[]), derive_seed(7, &[0]));
    }

    #[test]
    fn streams_reproduce() {
        let mut r1 = stream(42, &[5, 9]);
        let mut r2 = stream(42, &[5, 9]);
        for _ in 0..16 {
            assert_eq!(r1.gen::<u64>(), r2.gen::<u64>());
        }
    }
}
