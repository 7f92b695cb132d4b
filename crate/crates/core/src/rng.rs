//! Named random streams.
//!
//! Every stochastic operation takes its generator from a stream derived from
//! one root seed, a purpose tag and a tuple of indices. Two streams that differ
//! in any component are statistically independent, and the same triple always
//! yields the same stream regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `root`, `tag` and `indices` into a 64-bit stream seed.
pub fn derive_seed(root: u64, tag: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the tag bytes, then splitmix chaining over the indices.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut acc = splitmix64(root ^ splitmix64(h));
    for &i in indices {
        acc = splitmix64(acc ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    acc
}

pub fn stream(root: u64, tag: &str, indices: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, tag, indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_triple_same_stream() {
        let mut a = stream(7, "qfe", &[1, 2, 3]);
        let mut b = stream(7, "qfe", &[1, 2, 3]);
        for _ in 0..16 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn components_separate_streams() {
        let base = derive_seed(7, "qfe", &[1, 2, 3]);
        assert_ne!(base, derive_seed(8, "qfe", &[1, 2, 3]));
        assert_ne!(base, derive_seed(7, "qfd", &[1, 2, 3]));
        assert_ne!(base, derive_seed(7, "qfe", &[1, 3, 2]));
        assert_ne!(base, derive_seed(7, "qfe", &[1, 2]));
    }
}
