//! Deterministic seed derivation.
//!
//! Every stochastic choice in this crate is keyed off one root seed, split
//! per (label, index path). Splitting instead of sharing a single generator
//! keeps replays reproducible and gives separate concerns (hash functions,
//! insertion coins, retention sampling, corpus generation) independent
//! streams: policy comparisons can share the arrival order while drawing
//! independent retention coins.

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// splitmix64 finalizer; fast avalanche, bit-stable across platforms.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from `base` for a label and an index path.
pub fn derive_seed(base: u64, label: &str, parts: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in label.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    h = mix64(h ^ base);
    for &p in parts {
        h = mix64(h.wrapping_add(GAMMA) ^ p);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_parts_separate_streams() {
        let a = derive_seed(7, "insert", &[0, 1]);
        let b = derive_seed(7, "insert", &[1, 0]);
        let c = derive_seed(7, "eliminate", &[0, 1]);
        let d = derive_seed(8, "insert", &[0, 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn derivation_is_stable() {
        // Frozen: replays and snapshots depend on this mapping never changing.
        assert_eq!(derive_seed(42, "sketch", &[]), derive_seed(42, "sketch", &[]));
        let x = derive_seed(42, "sketch", &[3]);
        assert_eq!(x, derive_seed(42, "sketch", &[3]));
    }
}
