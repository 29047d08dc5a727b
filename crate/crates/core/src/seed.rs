//! Counter-based seed derivation.
//!
//! Every random stream is addressed by `(master, stream name, index)`:
//!
//! ```text
//! seed = splitmix64(splitmix64(master ^ fnv1a64(stream)) ^ index)
//! ```
//!
//! Streams never depend on scheduling order, so parallel sweeps reproduce
//! sequential ones bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a64(stream)) ^ index)
}

pub fn rng_for(master: u64, stream: &str, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(master, stream, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference generator seeded with 0.
        let mut state: u64 = 0;
        let mut next = || {
            let out = splitmix64(state);
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            out
        };
        assert_eq!(next(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(next(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn streams_are_distinct_and_stable() {
        let a = derive_seed(7, "train-message", 0);
        let b = derive_seed(7, "train-message", 1);
        let c = derive_seed(7, "test-message", 0);
        let d = derive_seed(8, "train-message", 0);
        assert!(a != b && a != c && a != d);
        assert_eq!(a, derive_seed(7, "train-message", 0));
    }
}
