//! Blocked dedup against a brute-force oracle, plus the planted-rate check.

use curate_core::dedup::{
    dedup_corpus, embed_batch, pairwise_dedup, pairwise_dedup_with, DedupOptions, HashedNgramEmbedder, VectorCache,
};
use curate_core::{EmbeddingVector, LanguageTag};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;
use common::{clustered, dedup_oracle as oracle, naive_dot, planted_prompts, random_unit};

const THRESHOLD: f64 = 0.8;

fn to_embeddings(vectors: &[Vec<f64>]) -> Vec<EmbeddingVector> {
    vectors.iter().map(|v| EmbeddingVector::new(v.clone()).unwrap()).collect()
}

fn check_against_oracle(vectors: &[Vec<f64>], options: DedupOptions) -> usize {
    let (survivors, removed) = oracle(vectors, THRESHOLD);
    let result = pairwise_dedup_with(&to_embeddings(vectors), THRESHOLD, options).unwrap();
    assert_eq!(result.survivors, survivors);
    let got: Vec<(usize, usize)> = result.removed.iter().map(|r| (r.index, r.culprit)).collect();
    assert_eq!(got, removed);
    for (k, &a) in result.survivors.iter().enumerate() {
        for &b in &result.survivors[k + 1..] {
            assert!(naive_dot(&vectors[a], &vectors[b]) <= THRESHOLD + 1e-12);
        }
    }
    removed.len()
}

#[test]
fn random_unit_vectors_match_oracle_for_100_seeds() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<Vec<f64>> = (0..500).map(|_| random_unit(&mut rng, 256)).collect();
        check_against_oracle(&vectors, DedupOptions::default());
    }
}

#[test]
fn clustered_vectors_match_oracle_under_any_blocking() {
    let mut total_removed = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let vectors = clustered(&mut rng, 500, 256);
        for (tile, block_rows, workers) in [(256, 0, 0), (1, 1, 1), (7, 3, 2), (64, 17, 4), (1000, 1000, 1)] {
            total_removed += check_against_oracle(&vectors, DedupOptions { tile, block_rows, workers });
        }
    }
    assert!(total_removed > 0, "clustered inputs must exercise removals");
}

#[test]
fn planted_near_duplicates_are_removed_at_the_planted_rate() {
    let prompts = planted_prompts();
    let refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
    let vectors = embed_batch(&refs, &HashedNgramEmbedder::default()).unwrap();
    let result = pairwise_dedup(&vectors, THRESHOLD).unwrap();
    let rate = result.removal_rate();
    assert!((rate - 0.75).abs() <= 0.02, "removal rate {rate}");
}

#[test]
fn threshold_monotonicity_does_not_hold_for_keep_first() {
    // b = e0; sim(a, b) = 0.78; sim(b, c) = sim(b, d) = 0.92; c and d lie on
    // opposite sides of b, so sim(c, d) and sim(a, c) stay below 0.75.
    let v = |x: f64, y: f64, z: f64| vec![x, y, z];
    let ra = (1.0f64 - 0.78 * 0.78).sqrt();
    let rc = (1.0f64 - 0.92 * 0.92).sqrt();
    let raw = [v(0.78, ra, 0.0), v(1.0, 0.0, 0.0), v(0.92, 0.0, rc), v(0.92, 0.0, -rc)];
    let vectors = to_embeddings(&raw);
    let low = pairwise_dedup(&vectors, 0.75).unwrap();
    let high = pairwise_dedup(&vectors, 0.9).unwrap();
    assert_eq!(low.survivors, vec![0, 2, 3]);
    assert_eq!(high.survivors, vec![0, 1]);
}

#[test]
fn corpus_dedup_is_per_language_and_cache_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let raw = clustered(&mut rng, 300, 64);
    let vectors = to_embeddings(&raw);
    let tags = [LanguageTag::new("A").unwrap(), LanguageTag::new("B").unwrap()];
    let items: Vec<(usize, LanguageTag)> = (0..300).map(|i| (i, tags[i % 2].clone())).collect();
    let result = dedup_corpus(items.clone(), &vectors, |x| &x.1, THRESHOLD, DedupOptions::default()).unwrap();
    for (k, tag) in tags.iter().enumerate() {
        let group: Vec<Vec<f64>> = (0..300).filter(|i| i % 2 == k).map(|i| raw[i].clone()).collect();
        let (survivors, _) = oracle(&group, THRESHOLD);
        let expected: Vec<usize> = survivors.iter().map(|s| 2 * s + k).collect();
        assert_eq!(result.per_language[tag].survivors, expected);
    }

    let mut cache = VectorCache::new(64);
    for (i, v) in vectors.iter().enumerate() {
        cache.insert(format!("r{i}"), v.clone()).unwrap();
    }
    let mut bytes = Vec::new();
    cache.write(&mut bytes).unwrap();
    let loaded = VectorCache::read(bytes.as_slice()).unwrap();
    let reloaded: Vec<EmbeddingVector> = loaded.entries().iter().map(|(_, v)| v.clone()).collect();
    assert_eq!(reloaded, vectors);
    let again = dedup_corpus(items, &reloaded, |x| &x.1, THRESHOLD, DedupOptions::default()).unwrap();
    assert_eq!(again, result);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_result_is_sound_and_maximal(seed in any::<u64>(), n in 1usize..120, threshold in 0.3f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = clustered(&mut rng, n, 16);
        let result = pairwise_dedup(&to_embeddings(&raw), threshold).unwrap();
        prop_assert_eq!(result.survivors.first(), Some(&0));
        for r in &result.removed {
            prop_assert!(r.culprit < r.index);
            prop_assert!(result.survivors.contains(&r.culprit));
            prop_assert!(r.similarity > threshold);
            for &s in result.survivors.iter().take_while(|&&s| s < r.culprit) {
                prop_assert!(naive_dot(&raw[s], &raw[r.index]) <= threshold + 1e-12);
            }
        }
        for (k, &a) in result.survivors.iter().enumerate() {
            for &b in &result.survivors[k + 1..] {
                prop_assert!(naive_dot(&raw[a], &raw[b]) <= threshold + 1e-12);
            }
        }
    }

    #[test]
    fn blocking_and_workers_do_not_change_results(seed in any::<u64>(), n in 1usize..200, tile in 1usize..80, rows in 0usize..40, workers in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = to_embeddings(&clustered(&mut rng, n, 24));
        let reference = pairwise_dedup(&vectors, THRESHOLD).unwrap();
        let blocked = pairwise_dedup_with(&vectors, THRESHOLD, DedupOptions { tile, block_rows: rows, workers }).unwrap();
        prop_assert_eq!(blocked, reference);
    }
}
