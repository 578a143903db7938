//! Stable 64-bit identifiers.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `bytes`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

fn fnv1a64_extend(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Identifier of the `index`-th record drawn from `source_tag`.
///
/// The tag and index are separated by a NUL byte so `("ab", 1)` and
/// `("a", ...)` style prefixes cannot collide structurally.
pub fn record_id(source_tag: &str, index: u64) -> u64 {
    let h = fnv1a64_extend(FNV_OFFSET, source_tag.as_bytes());
    let h = fnv1a64_extend(h, &[0]);
    fnv1a64_extend(h, &index.to_le_bytes())
}

/// Identifier of a (style, content) pairing.
pub fn combination_id(style_id: u64, content_id: u64) -> u64 {
    let h = fnv1a64_extend(FNV_OFFSET, &style_id.to_le_bytes());
    fnv1a64_extend(h, &content_id.to_le_bytes())
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
    fn record_ids_are_stable_and_distinct() {
        assert_eq!(record_id("pool", 7), record_id("pool", 7));
        assert_ne!(record_id("pool", 7), record_id("pool", 8));
        assert_ne!(record_id("pool", 7), record_id("pool2", 7));
    }

    #[test]
    fn combination_id_is_ordered() {
        assert_ne!(combination_id(1, 2), combination_id(2, 1));
    }
}
