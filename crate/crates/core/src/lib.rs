//! Curation pipeline for multilingual prompt-response datasets.
//!
//! The stages mirror how a chat-log corpus is turned into a distilled
//! instruction dataset:
//!
//! 1. [`ingest`] streams line-delimited source conversations into validated
//!    [`RawRecord`]s.
//! 2. [`filters`] runs the ordered cleaning funnel (moderation, unknown
//!    languages, anonymised prompts, model references, language-ID confidence,
//!    token budget) and keeps a [`FunnelReport`].
//! 3. [`sampler`] caps each language at a fixed number of prompts using a
//!    seeded, per-language generator.
//! 4. [`dedup`] embeds prompts and removes near-duplicates per language with an
//!    exact, cache-blocked greedy pass.
//! 5. [`synth`] asks a completion provider for responses and drops the ones
//!    that were truncated or never answered.
//! 6. [`report`] blends datasets, extracts language subsets, and writes the
//!    final files plus a manifest and language distribution.

pub mod dedup;
pub mod filters;
pub mod ingest;
pub mod langid;
pub mod model;
mod par;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use model::{
    EmbeddingVector, FinishState, FunnelReport, LanguageTag, PipelineConfig, PromptResponsePair,
    RawRecord, Role, StageCounts, Turn,
};
