//! Stable feature hashing.
//!
//! All hashed features and embeddings use 64-bit FNV-1a over the UTF-8 bytes
//! of the feature parts. Parts are separated by the unit separator byte
//! `0x1f` and prefixed with a salt, so `("ab", "c")` and `("a", "bc")` land in
//! different buckets. Changing either constant invalidates stored checkpoints.

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Salt for policy features (base and tip channels).
pub const FEATURE_SALT: u64 = 0x5eed_e4b0_2025_0001;
/// Salt for the bag-of-tokens state embedding.
pub const EMBED_SALT: u64 = 0x5eed_e4b0_2025_0002;

#[inline]
fn fnv_bytes(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// FNV-1a of the salt (little-endian bytes) followed by each part.
pub fn hash_parts(salt: u64, parts: &[&str]) -> u64 {
    let mut h = fnv_bytes(FNV_OFFSET, &salt.to_le_bytes());
    for p in parts {
        h = fnv_bytes(h, &[0x1f]);
        h = fnv_bytes(h, p.as_bytes());
    }
    h
}

#[inline]
pub fn bucket(salt: u64, parts: &[&str], dim: usize) -> usize {
    (hash_parts(salt, parts) % dim as u64) as usize
}

/// SplitMix64 step, used to derive layout choices and rng sub-seeds.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vector() {
        // FNV-1a("a") from the reference tables.
        assert_eq!(fnv_bytes(FNV_OFFSET, b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn part_boundaries_matter() {
        assert_ne!(hash_parts(1, &["ab", "c"]), hash_parts(1, &["a", "bc"]));
        assert_ne!(hash_parts(1, &["a"]), hash_parts(2, &["a"]));
    }
}
