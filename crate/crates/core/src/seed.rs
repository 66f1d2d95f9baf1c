//! Deterministic RNG stream derivation.
//!
//! Every stochastic task (one pattern measurement inside one sweep cell) owns
//! a private RNG derived from the root seed and the task coordinates, so runs
//! replay bit-identically regardless of execution order or parallelism.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche for combining seed components.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a root seed with a sequence of coordinate words into one stream seed.
pub fn derive_seed(root: u64, words: &[u64]) -> u64 {
    let mut state = splitmix64(root);
    for &w in words {
        state = splitmix64(state ^ w);
    }
    state
}

/// RNG for the stream identified by `(root, words)`.
pub fn derive_rng(root: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, words))
}

/// Stable word encoding for an f64 coordinate (e.g. a noise level).
pub fn f64_word(x: f64) -> u64 {
    x.to_bits()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derivation_is_deterministic_and_sensitive() {
        let a = derive_seed(42, &[1, 2, 3]);
        assert_eq!(a, derive_seed(42, &[1, 2, 3]));
        assert_ne!(a, derive_seed(42, &[1, 2, 4]));
        assert_ne!(a, derive_seed(43, &[1, 2, 3]));
        assert_ne!(a, derive_seed(42, &[1, 2]));
    }

    #[test]
    fn rng_streams_replay() {
        let mut r1 = derive_rng(7, &[0, 5]);
        let mut r2 = derive_rng(7, &[0, 5]);
        for _ in 0..16 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }
}
