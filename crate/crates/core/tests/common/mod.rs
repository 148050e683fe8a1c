//! Brute-force oracles and input generators shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use curate_core::filters::{
    ANONYMIZATION, LANGUAGE_CONFIDENCE, MODEL_KEYWORD, MODERATION, REASON_DETECTOR_ERROR, REASON_LOW_CONFIDENCE,
    TOKEN_LIMIT, UNKNOWN_LANGUAGE,
};
use curate_core::langid::{LanguageDetector, NgramDetector};
use curate_core::rng::keyed_rng;
use curate_core::PipelineConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

pub const KEPT: &str = "kept";

/// `(stage, reason)` that removes one corpus line, or `(KEPT, KEPT)`,
/// computed from the raw JSON.
pub fn funnel_verdict(line: &Value, cfg: &PipelineConfig, detector: &NgramDetector) -> (&'static str, &'static str) {
    let turns = line["turns"].as_array().unwrap();
    let first = |role: &str| turns.iter().position(|t| t["role"] == role);
    let hi = first("human").unwrap();
    let ai = first("assistant");
    let prompt = turns[hi]["text"].as_str().unwrap();
    let label = line["language"].as_str().unwrap();
    let lower = prompt.to_lowercase();

    if line["moderation_flagged"].as_bool().unwrap() {
        return (MODERATION, MODERATION);
    }
    if cfg.unknown_languages.contains(label) {
        return (UNKNOWN_LANGUAGE, UNKNOWN_LANGUAGE);
    }
    if lower.contains(&cfg.anonymization_marker.to_lowercase()) {
        return (ANONYMIZATION, ANONYMIZATION);
    }
    if cfg.keyword_list.iter().any(|k| lower.contains(&k.to_lowercase())) {
        return (MODEL_KEYWORD, MODEL_KEYWORD);
    }
    let mass = detector
        .distribution(prompt)
        .ok()
        .and_then(|d| d.into_iter().find(|(l, _)| l.as_str() == label).map(|(_, p)| p));
    match mass {
        None => return (LANGUAGE_CONFIDENCE, REASON_DETECTOR_ERROR),
        Some(p) if p < cfg.confidence_threshold => return (LANGUAGE_CONFIDENCE, REASON_LOW_CONFIDENCE),
        Some(_) => {}
    }
    match line.get("turn_token_counts").and_then(Value::as_array) {
        Some(counts) => {
            let total = counts[hi].as_u64().unwrap() + ai.map_or(0, |a| counts[a].as_u64().unwrap());
            if total > u64::from(cfg.token_limit) {
                return (TOKEN_LIMIT, TOKEN_LIMIT);
            }
        }
        None => {
            // Every token spans at least one character, so a short pair cannot
            // exceed the limit.
            let chars = prompt.chars().count() + ai.map_or(0, |a| turns[a]["text"].as_str().unwrap().chars().count());
            assert!(chars <= cfg.token_limit as usize, "fixture invariant: uncounted records are short");
        }
    }
    (KEPT, KEPT)
}

pub fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Keep-first greedy over the full similarity matrix: survivors and
/// `(removed, culprit)` pairs.
pub fn dedup_oracle(vectors: &[Vec<f64>], threshold: f64) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut survivors: Vec<usize> = Vec::new();
    let mut removed = Vec::new();
    for i in 0..vectors.len() {
        match survivors.iter().find(|&&s| naive_dot(&vectors[s], &vectors[i]) > threshold) {
            Some(&culprit) => removed.push((i, culprit)),
            None => survivors.push(i),
        }
    }
    (survivors, removed)
}

/// Largest similarity among `indices`, checked pair by pair.
pub fn max_pair_similarity(vectors: &[Vec<f64>], indices: &[usize]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (k, &a) in indices.iter().enumerate() {
        for &b in &indices[k + 1..] {
            max = max.max(naive_dot(&vectors[a], &vectors[b]));
        }
    }
    max
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = naive_dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    unit((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

/// Points scattered around a few centres so that similarities straddle the
/// threshold.
pub fn clustered(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let centres: Vec<Vec<f64>> = (0..20).map(|_| random_unit(rng, dim)).collect();
    (0..n)
        .map(|_| {
            let c = &centres[rng.random_range(0..centres.len())];
            let noise: f64 = rng.random_range(0.2..0.9);
            let e = random_unit(rng, dim);
            unit(c.iter().zip(&e).map(|(a, b)| a + noise * b).collect())
        })
        .collect()
}

/// 250 random CJK prompts, each followed by three one-character edits with
/// different final punctuation: 75% of the group are planted near-duplicates.
pub fn planted_prompts() -> Vec<String> {
    let alphabet: Vec<char> = ('\u{4e00}'..='\u{4fff}').collect();
    let mut rng = keyed_rng(3, "planted");
    let mut prompts = Vec::new();
    for _ in 0..250 {
        let base: String = (0..40).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        prompts.push(base.clone());
        for edit in ["?", "。", "！"] {
            let mut variant: Vec<char> = base.chars().collect();
            let at = rng.random_range(0..variant.len());
            variant[at] = alphabet[rng.random_range(0..alphabet.len())];
            prompts.push(variant.into_iter().collect::<String>() + edit);
        }
    }
    prompts
}
