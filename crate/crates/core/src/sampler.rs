//! Per-language capped sampling.
//!
//! Each language draws from its own stream keyed by `(seed, language)`, so the
//! selection inside one language never depends on any other language's records.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{LanguageTag, RawRecord, StageCounts};
use crate::rng::{choose_indices, keyed_rng};

pub const SAMPLING: &str = "sampling";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("sample cap must be at least 1")]
    ZeroCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplePlan {
    cap: usize,
    seed: u64,
}

impl SamplePlan {
    pub fn new(cap: usize, seed: u64) -> Result<Self, SampleError> {
        if cap == 0 {
            return Err(SampleError::ZeroCap);
        }
        Ok(Self { cap, seed })
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Positions selected for each language, ascending within a language.
pub fn select_positions<'a, I>(languages: I, plan: SamplePlan) -> BTreeMap<LanguageTag, Vec<usize>>
where
    I: IntoIterator<Item = &'a LanguageTag>,
{
    let mut groups: BTreeMap<LanguageTag, Vec<usize>> = BTreeMap::new();
    for (pos, lang) in languages.into_iter().enumerate() {
        groups.entry(lang.clone()).or_default().push(pos);
    }
    let chosen: Vec<(LanguageTag, Vec<usize>)> = groups
        .into_par_iter()
        .map(|(lang, positions)| {
            let mut rng = keyed_rng(plan.seed, lang.as_str());
            let picks = choose_indices(&mut rng, positions.len(), plan.cap);
            let selected = picks.into_iter().map(|i| positions[i]).collect();
            (lang, selected)
        })
        .collect();
    chosen.into_iter().collect()
}

/// Samples any item type given a way to read its language. Output is ordered
/// by language tag, then by original position.
pub fn sample_by<T, F>(items: Vec<T>, language: F, plan: SamplePlan) -> Vec<T>
where
    F: Fn(&T) -> &LanguageTag,
{
    let selection = select_positions(items.iter().map(&language), plan);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    selection
        .into_values()
        .flatten()
        .map(|pos| slots[pos].take().expect("each position is selected once"))
        .collect()
}

pub fn sample_per_language(records: Vec<RawRecord>, plan: SamplePlan) -> Vec<RawRecord> {
    sample_by(records, |r| &r.language, plan)
}

/// Funnel line for a sampling pass.
pub fn sampling_stage(input: usize, kept: usize) -> StageCounts {
    StageCounts::new(SAMPLING, input as u64, kept as u64)
}
