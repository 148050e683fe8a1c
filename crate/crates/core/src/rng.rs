//! Seeded randomness shared by the sampler and the blender.
//!
//! Every random choice in the pipeline draws from a ChaCha20 stream whose
//! 32-byte key is `SHA-256(seed as u64 little-endian || key bytes)`. Integers
//! below a bound are drawn by rejection on raw `u64` output, so the exact
//! selection is reproducible by any implementation of ChaCha20 and SHA-256.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// Derives an independent stream for `(seed, key)`.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut material = [0u8; 32];
    material.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(material)
}

/// Uniform integer in `0..bound`. Panics if `bound == 0`.
pub fn uniform_below<R: RngCore>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below requires a positive bound");
    // Reject the low `2^64 mod bound` values so every residue is equally likely.
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

/// Chooses `k` distinct indices from `0..n` (partial Fisher-Yates), returned
/// in ascending order. When `k >= n` every index is returned without drawing.
pub fn choose_indices<R: RngCore>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_below(rng, (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// In-place Fisher-Yates shuffle (Durstenfeld, descending index).
pub fn shuffle<T, R: RngCore>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_streams_are_stable_and_distinct() {
        let a = keyed_rng(7, "English").next_u64();
        let b = keyed_rng(7, "English").next_u64();
        let c = keyed_rng(7, "Chinese").next_u64();
        let d = keyed_rng(8, "English").next_u64();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn uniform_below_stays_in_range() {
        let mut rng = keyed_rng(1, "range");
        for bound in [1u64, 2, 3, 7, 1000, u64::MAX] {
            for _ in 0..200 {
                assert!(uniform_below(&mut rng, bound) < bound);
            }
        }
    }

    #[test]
    fn uniform_below_is_roughly_flat() {
        let mut rng = keyed_rng(3, "flat");
        let mut hist = [0usize; 6];
        for _ in 0..60_000 {
            hist[uniform_below(&mut rng, 6) as usize] += 1;
        }
        for count in hist {
            assert!((9_300..10_700).contains(&count), "{hist:?}");
        }
    }

    #[test]
    fn choose_indices_distinct_sorted() {
        let mut rng = keyed_rng(11, "choose");
        let picked = choose_indices(&mut rng, 100, 30);
        assert_eq!(picked.len(), 30);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert!(picked.iter().all(|&i| i < 100));
        assert_eq!(choose_indices(&mut rng, 5, 10), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = keyed_rng(5, "blend");
        let mut v: Vec<u32> = (0..500).collect();
        shuffle(&mut rng, &mut v);
        assert_ne!(v, (0..500).collect::<Vec<_>>());
        v.sort_unstable();
        assert_eq!(v, (0..500).collect::<Vec<_>>());
    }
}
