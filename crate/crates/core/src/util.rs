//! Seed derivation, checksums, and the parallel-map shim.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// FNV-1a over raw bytes. Stable across platforms and releases, unlike
/// `std::hash::DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed from a base seed and a list of byte-string parts.
/// Used to give every image, model, and step its own reproducible stream.
pub fn derive_seed(base: u64, parts: &[&[u8]]) -> u64 {
    let mut buf = Vec::with_capacity(8 + parts.iter().map(|p| p.len() + 1).sum::<usize>());
    buf.extend_from_slice(&base.to_le_bytes());
    for p in parts {
        buf.push(0x1f); // separator so ("ab","c") != ("a","bc")
        buf.extend_from_slice(p);
    }
    fnv1a(&buf)
}

pub fn rng_from(base: u64, parts: &[&[u8]]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(base, parts))
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Results come back in input order, so downstream reductions are
/// deterministic either way.
pub fn maybe_par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Indexed variant of [`maybe_par_map`].
pub fn maybe_par_map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_parts() {
        assert_ne!(
            derive_seed(1, &[b"ab", b"c"]),
            derive_seed(1, &[b"a", b"bc"])
        );
        assert_eq!(derive_seed(7, &[b"x"]), derive_seed(7, &[b"x"]));
    }

    #[test]
    fn par_map_preserves_order() {
        let v: Vec<usize> = (0..100).collect();
        let out = maybe_par_map(&v, |x| x * 2);
        assert_eq!(out, (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }
}
