//! Seeded random substreams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by a tuple of
//! integers, so results do not depend on iteration order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a key path into a new seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn substream(seed: u64, keys: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, keys))
}

/// Stable numeric tag for string keys (FNV-1a).
pub fn tag(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, &[1, 2]).gen();
        let b: u64 = substream(7, &[1, 2]).gen();
        let c: u64 = substream(7, &[2, 1]).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(7, &[]), derive_seed(8, &[]));
    }
}
