//! Reproducible random streams.
//!
//! Derivation rule `splitmix64-chacha12-v1`: the substream seed of replicate
//! `i` under master seed `m` is `mix(m + mix(i + G))`, where `mix` is the
//! splitmix64 finalizer and `G` the golden-ratio increment. The substream seed
//! keys a ChaCha12 generator; independent noise sources for the same replicate
//! use distinct ChaCha stream ids (see [`Stream`]). `mix` is a bijection of
//! `u64`, so distinct replicate indices never share a substream seed.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub const DERIVATION_RULE: &str = "splitmix64-chacha12-v1";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise sources that must be independent within one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Fractional = 0,
    Brownian = 1,
    Auxiliary = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub master: u64,
}

impl SeedPolicy {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn substream_seed(&self, index: u64) -> u64 {
        splitmix64(
            self.master
                .wrapping_add(splitmix64(index.wrapping_add(GOLDEN_GAMMA))),
        )
    }

    pub fn rng(&self, index: u64, stream: Stream) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.substream_seed(index));
        rng.set_stream(stream as u64);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn distinct_indices_give_distinct_seeds() {
        let policy = SeedPolicy::new(42);
        let seeds: HashSet<u64> = (0..100_000).map(|i| policy.substream_seed(i)).collect();
        assert_eq!(seeds.len(), 100_000);
    }

    #[test]
    fn same_master_and_index_reproduce() {
        let a: Vec<u64> = SeedPolicy::new(7).rng(3, Stream::Fractional).random_iter().take(8).collect();
        let b: Vec<u64> = SeedPolicy::new(7).rng(3, Stream::Fractional).random_iter().take(8).collect();
        assert_eq!(a, b);
        let c: Vec<u64> = SeedPolicy::new(7).rng(3, Stream::Brownian).random_iter().take(8).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn derivation_rule_is_pinned() {
        // Changing these values changes every experiment; bump DERIVATION_RULE.
        assert_eq!(splitmix64(0), 0);
        assert_eq!(SeedPolicy::new(0).substream_seed(0), splitmix64(splitmix64(GOLDEN_GAMMA)));
    }
}
