//! Hash-based seed derivation shared by the stochastic components.

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub(crate) const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

pub(crate) fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer; spreads FNV output before it seeds an RNG.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a per-item RNG stream: (global seed, label, extra words).
pub(crate) fn derive(seed: u64, label: &str, extra: &[u64]) -> u64 {
    let mut h = fnv1a64_extend(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a64_extend(h, label.as_bytes());
    h = fnv1a64_extend(h, &[0xff]);
    for e in extra {
        h = fnv1a64_extend(h, &e.to_le_bytes());
    }
    mix64(h)
}

pub(crate) fn rng(seed: u64, label: &str, extra: &[u64]) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(derive(seed, label, extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn derive_separates_inputs() {
        assert_ne!(derive(1, "c1", &[]), derive(2, "c1", &[]));
        assert_ne!(derive(1, "c1", &[]), derive(1, "c2", &[]));
        assert_ne!(derive(1, "c1", &[0]), derive(1, "c1", &[1]));
        assert_eq!(derive(9, "x", &[3]), derive(9, "x", &[3]));
    }
}
