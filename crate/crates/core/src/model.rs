//! Domain types shared by every pipeline stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::langid::Detection;

/// Language labels that mark a record as unrecognised or fictional.
pub const DEFAULT_UNKNOWN_LANGUAGES: [&str; 5] = ["unknown", "Klingon", "xx", "zp", "zzp"];

/// Substrings that mark a prompt as talking about a specific chat model.
pub const DEFAULT_MODEL_KEYWORDS: [&str; 7] =
    ["gpt", "vicuna", "alpaca", "llama", "koala", "claude", "guanaco"];

/// Placeholder stem used by the source corpus for anonymised spans (NAME0, NAME1, ...).
pub const DEFAULT_ANONYMIZATION_MARKER: &str = "name";

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("language tag is empty")]
    EmptyLanguage,
    #[error("embedding has no components")]
    EmptyEmbedding,
    #[error("embedding component {0} is not finite")]
    NonFiniteEmbedding(usize),
    #[error("embedding has zero norm")]
    ZeroNormEmbedding,
    #[error("embedding norm {0} is not 1")]
    NotUnitNorm(f64),
}

/// Per-character simple case folding, used for all case-insensitive matching.
///
/// Characters whose lowercase form expands (e.g. U+0130) keep the first
/// character of the expansion; long s and final sigma fold to `s` and `σ`.
pub fn fold_case(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{17F}' => 's',
            '\u{3C2}' => '\u{3C3}',
            c if c.is_ascii() => c.to_ascii_lowercase(),
            c => c.to_lowercase().next().unwrap_or(c),
        })
        .collect()
}

/// Opaque language label as used by the source corpus ("English", "Japanese", ...).
///
/// Labels are case-sensitive and never normalised to ISO codes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(code: impl Into<String>) -> Result<Self, ModelError> {
        let code = code.into();
        if code.trim().is_empty() {
            return Err(ModelError::EmptyLanguage);
        }
        Ok(Self(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_in(&self, set: &BTreeSet<String>) -> bool {
        set.contains(&self.0)
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<LanguageTag> for String {
    fn from(tag: LanguageTag) -> Self {
        tag.0
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[serde(alias = "user")]
    Human,
    #[serde(alias = "gpt")]
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    /// Token count shipped with the source corpus, if any.
    pub token_count: Option<u32>,
}

impl Turn {
    pub fn human(text: impl Into<String>) -> Self {
        Self { role: Role::Human, text: text.into(), token_count: None }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into(), token_count: None }
    }

    pub fn with_tokens(mut self, count: u32) -> Self {
        self.token_count = Some(count);
        self
    }
}

/// One source conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub source_model: String,
    pub language: LanguageTag,
    pub turns: Vec<Turn>,
    pub moderation_flagged: bool,
    pub detection: Option<Detection>,
    /// Unrecognised input fields, carried through untouched.
    pub extra: BTreeMap<String, Value>,
}

impl RawRecord {
    pub fn new(
        id: impl Into<String>,
        language: LanguageTag,
        turns: Vec<Turn>,
        moderation_flagged: bool,
    ) -> Self {
        Self {
            id: id.into(),
            source_model: String::new(),
            language,
            turns,
            moderation_flagged,
            detection: None,
            extra: BTreeMap::new(),
        }
    }

    /// The first human turn. Validated records always start with one.
    pub fn first_prompt(&self) -> Option<&Turn> {
        self.turns.iter().find(|t| t.role == Role::Human)
    }

    /// The first assistant turn, i.e. the source model's response.
    pub fn first_response(&self) -> Option<&Turn> {
        self.turns.iter().find(|t| t.role == Role::Assistant)
    }

    pub fn prompt_text(&self) -> &str {
        self.first_prompt().map(|t| t.text.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedRecord {
    #[error("record has no turns")]
    EmptyConversation,
    #[error("first turn is not from the human")]
    NonHumanFirstTurn,
    #[error("record id is empty")]
    EmptyId,
    #[error("turn_token_counts has {counts} entries for {turns} turns")]
    TokenCountMismatch { turns: usize, counts: usize },
    #[error("line is not valid UTF-8")]
    InvalidUtf8,
    #[error("line does not match the record schema: {0}")]
    Schema(String),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
}

impl MalformedRecord {
    /// Stable key used in rejection breakdowns.
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptyConversation => "empty_conversation",
            Self::NonHumanFirstTurn => "non_human_first_turn",
            Self::EmptyId => "empty_id",
            Self::TokenCountMismatch { .. } => "token_count_mismatch",
            Self::InvalidUtf8 => "invalid_utf8",
            Self::Schema(_) => "schema",
            Self::DuplicateId(_) => "duplicate_id",
        }
    }
}

/// Checks the record-level invariants and hands the record back unchanged.
pub fn validate_record(record: RawRecord) -> Result<RawRecord, MalformedRecord> {
    if record.id.is_empty() {
        return Err(MalformedRecord::EmptyId);
    }
    match record.turns.first() {
        None => Err(MalformedRecord::EmptyConversation),
        Some(turn) if turn.role != Role::Human => Err(MalformedRecord::NonHumanFirstTurn),
        Some(_) => Ok(record),
    }
}

/// Per-stage accounting line of a [`FunnelReport`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage: String,
    pub input: u64,
    pub kept: u64,
    pub removed: u64,
    /// Removal counts split by drop reason, when a stage has more than one.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reasons: BTreeMap<String, u64>,
}

impl StageCounts {
    pub fn new(stage: impl Into<String>, input: u64, kept: u64) -> Self {
        assert!(kept <= input, "a stage cannot keep more than it receives");
        Self { stage: stage.into(), input, kept, removed: input - kept, reasons: BTreeMap::new() }
    }

    /// Human-readable label for the aligned table.
    pub fn label(&self) -> &str {
        match self.stage.as_str() {
            "moderation" => "Moderation check",
            "unknown_language" => "Remove unknown languages",
            "anonymization" => "Remove anonymised prompts",
            "model_keyword" => "Remove model references",
            "language_confidence" => "Language-ID confidence",
            "token_limit" => "Prompt + response token limit",
            "sampling" => "Per-language sampling",
            "dedup" => "Fuzzy deduplication",
            "incomplete" => "Remove unanswered/truncated",
            other => other,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FunnelError {
    #[error("stage {stage:?}: input {input} != kept {kept} + removed {removed}")]
    Unbalanced { stage: String, input: u64, kept: u64, removed: u64 },
    #[error("stage {next:?} receives {input} records but {prev:?} kept {kept}")]
    Broken { prev: String, next: String, kept: u64, input: u64 },
    #[error("malformed funnel line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Ordered per-stage accounting of a pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub stages: Vec<StageCounts>,
}

impl FunnelReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, stage: StageCounts) {
        self.stages.push(stage);
    }

    pub fn extend(&mut self, other: FunnelReport) {
        self.stages.extend(other.stages);
    }

    pub fn start(&self) -> Option<u64> {
        self.stages.first().map(|s| s.input)
    }

    pub fn final_kept(&self) -> Option<u64> {
        self.stages.last().map(|s| s.kept)
    }

    pub fn stage(&self, name: &str) -> Option<&StageCounts> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Verifies per-stage balance and the chaining identity between stages.
    /// Chaining implies kept counts never increase.
    pub fn check(&self) -> Result<(), FunnelError> {
        for s in &self.stages {
            if s.input != s.kept + s.removed {
                return Err(FunnelError::Unbalanced {
                    stage: s.stage.clone(),
                    input: s.input,
                    kept: s.kept,
                    removed: s.removed,
                });
            }
        }
        for pair in self.stages.windows(2) {
            if pair[0].kept != pair[1].input {
                return Err(FunnelError::Broken {
                    prev: pair[0].stage.clone(),
                    next: pair[1].stage.clone(),
                    kept: pair[0].kept,
                    input: pair[1].input,
                });
            }
        }
        Ok(())
    }

    /// Two-column table: a `Start` row followed by the count left after each stage.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::with_capacity(self.stages.len() + 1);
        if let Some(start) = self.start() {
            rows.push(("Start".to_string(), group_thousands(start)));
        }
        for s in &self.stages {
            rows.push((s.label().to_string(), group_thousands(s.kept)));
        }
        let name_width =
            rows.iter().map(|(n, _)| n.chars().count()).chain(["Stage".len()]).max().unwrap_or(0);
        let count_width = rows
            .iter()
            .map(|(_, c)| c.len())
            .chain(["Number of prompts".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        out.push_str(&format!("{:<name_width$}  {:>count_width$}\n", "Stage", "Number of prompts"));
        out.push_str(&format!("{}  {}\n", "-".repeat(name_width), "-".repeat(count_width)));
        for (name, count) in rows {
            let pad = name_width - name.chars().count();
            out.push_str(&format!("{name}{}  {count:>count_width$}\n", " ".repeat(pad)));
        }
        out
    }

    /// One JSON object per stage: `{"stage", "input", "kept", "removed"}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            out.push_str(&serde_json::to_string(s).expect("stage counts serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, FunnelError> {
        let mut report = FunnelReport::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let stage: StageCounts = serde_json::from_str(line)
                .map_err(|e| FunnelError::Parse { line: i + 1, message: e.to_string() })?;
            report.push(stage);
        }
        Ok(report)
    }
}

fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Unit-norm embedding used for dedup similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalises `values` to unit Euclidean norm.
    pub fn new(mut values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyEmbedding);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteEmbedding(i));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(ModelError::ZeroNormEmbedding);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self { values })
    }

    /// Accepts values that are already unit-norm (within 1e-6) without
    /// rescaling them, so stored vectors load back bit-for-bit.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyEmbedding);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteEmbedding(i));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(ModelError::NotUnitNorm(norm));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishState {
    Complete,
    Truncated,
    Unanswered,
}

/// A curated prompt with its synthesized response; the output unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptResponsePair {
    pub id: String,
    pub language: LanguageTag,
    pub prompt: String,
    pub response: String,
    pub finish_state: FinishState,
}

impl PromptResponsePair {
    pub fn is_complete(&self) -> bool {
        self.finish_state == FinishState::Complete && !self.response.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} must lie in [0, 1], got {value}")]
    OutOfUnitRange { field: &'static str, value: f64 },
    #[error("{field} must be positive")]
    NotPositive { field: &'static str },
    #[error("temperature must be a non-negative finite number, got {0}")]
    Temperature(f64),
    #[error("{field} entry {value:?} must be non-empty lowercase text")]
    NotLowercase { field: &'static str, value: String },
    #[error("anonymization_pattern does not compile: {0}")]
    Pattern(String),
}

/// Every tunable of the pipeline. `seed` has no default on purpose: every
/// random step must be reproducible from an explicit value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "defaults::confidence_threshold")]
    pub confidence_threshold: f64,
    #[serde(default = "defaults::token_limit")]
    pub token_limit: u32,
    #[serde(default = "defaults::sample_cap")]
    pub sample_cap: usize,
    #[serde(default = "defaults::dedup_threshold")]
    pub dedup_threshold: f64,
    #[serde(default = "defaults::keyword_list")]
    pub keyword_list: Vec<String>,
    #[serde(default = "defaults::anonymization_marker")]
    pub anonymization_marker: String,
    /// Opt-in regex that replaces the plain substring rule for anonymised prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anonymization_pattern: Option<String>,
    #[serde(default = "defaults::unknown_languages")]
    pub unknown_languages: BTreeSet<String>,
    #[serde(default = "defaults::max_response_tokens")]
    pub max_response_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

mod defaults {
    use super::*;

    pub fn confidence_threshold() -> f64 {
        0.8
    }
    pub fn token_limit() -> u32 {
        512
    }
    pub fn sample_cap() -> usize {
        25_000
    }
    pub fn dedup_threshold() -> f64 {
        0.8
    }
    pub fn keyword_list() -> Vec<String> {
        DEFAULT_MODEL_KEYWORDS.iter().map(|s| s.to_string()).collect()
    }
    pub fn anonymization_marker() -> String {
        DEFAULT_ANONYMIZATION_MARKER.to_string()
    }
    pub fn unknown_languages() -> BTreeSet<String> {
        DEFAULT_UNKNOWN_LANGUAGES.iter().map(|s| s.to_string()).collect()
    }
    pub fn max_response_tokens() -> u32 {
        2048
    }
}

impl PipelineConfig {
    /// Defaults for everything except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            confidence_threshold: defaults::confidence_threshold(),
            token_limit: defaults::token_limit(),
            sample_cap: defaults::sample_cap(),
            dedup_threshold: defaults::dedup_threshold(),
            keyword_list: defaults::keyword_list(),
            anonymization_marker: defaults::anonymization_marker(),
            anonymization_pattern: None,
            unknown_languages: defaults::unknown_languages(),
            max_response_tokens: defaults::max_response_tokens(),
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, value) in [
            ("confidence_threshold", self.confidence_threshold),
            ("dedup_threshold", self.dedup_threshold),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::OutOfUnitRange { field, value });
            }
        }
        if self.token_limit == 0 {
            return Err(ConfigError::NotPositive { field: "token_limit" });
        }
        if self.sample_cap == 0 {
            return Err(ConfigError::NotPositive { field: "sample_cap" });
        }
        if self.max_response_tokens == 0 {
            return Err(ConfigError::NotPositive { field: "max_response_tokens" });
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ConfigError::Temperature(self.temperature));
        }
        for kw in &self.keyword_list {
            if kw.is_empty() || kw.to_lowercase() != *kw {
                return Err(ConfigError::NotLowercase { field: "keyword_list", value: kw.clone() });
            }
        }
        let marker = &self.anonymization_marker;
        if marker.is_empty() || marker.to_lowercase() != *marker {
            return Err(ConfigError::NotLowercase {
                field: "anonymization_marker",
                value: marker.clone(),
            });
        }
        if let Some(pattern) = &self.anonymization_pattern {
            regex::Regex::new(pattern).map_err(|e| ConfigError::Pattern(e.to_string()))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of this config.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(s: &str) -> LanguageTag {
        LanguageTag::new(s).unwrap()
    }

    #[test]
    fn fold_case_handles_scripts() {
        assert_eq!(fold_case("Hello NAME0"), "hello name0");
        assert_eq!(fold_case("ПРИВЕТ"), "привет");
        assert_eq!(fold_case("ΟΔΟΣ"), "οδοσ");
        assert_eq!(fold_case("ſ"), "s");
        assert_eq!(fold_case("\u{130}x"), "ix");
        assert_eq!(fold_case("你好"), "你好");
    }

    #[test]
    fn language_tag_rejects_blank() {
        assert_eq!(LanguageTag::new("  "), Err(ModelError::EmptyLanguage));
        assert!(serde_json::from_str::<LanguageTag>("\"\"").is_err());
        assert_eq!(tag("Klingon").as_str(), "Klingon");
    }

    #[test]
    fn unknown_language_membership_is_case_sensitive() {
        let set = defaults::unknown_languages();
        assert!(tag("Klingon").is_in(&set));
        assert!(tag("zzp").is_in(&set));
        assert!(!tag("klingon").is_in(&set));
        assert!(!tag("French").is_in(&set));
    }

    #[test]
    fn validate_accepts_single_human_turn() {
        let r = RawRecord::new("a", tag("English"), vec![Turn::human("hi")], false);
        assert_eq!(validate_record(r.clone()), Ok(r));
    }

    #[test]
    fn validate_rejects_empty_conversation() {
        let r = RawRecord::new("a", tag("English"), vec![], false);
        assert_eq!(validate_record(r), Err(MalformedRecord::EmptyConversation));
    }

    #[test]
    fn validate_rejects_assistant_first() {
        let r = RawRecord::new(
            "a",
            tag("English"),
            vec![Turn::assistant("hello"), Turn::human("hi")],
            false,
        );
        assert_eq!(validate_record(r), Err(MalformedRecord::NonHumanFirstTurn));
    }

    #[test]
    fn validate_is_idempotent() {
        let r = RawRecord::new("a", tag("English"), vec![Turn::human("x")], true);
        let once = validate_record(r).unwrap();
        assert_eq!(validate_record(once.clone()), Ok(once));
    }

    #[test]
    fn funnel_check_catches_broken_chain() {
        let mut report = FunnelReport::new();
        report.push(StageCounts::new("a", 10, 7));
        report.push(StageCounts::new("b", 7, 7));
        assert!(report.check().is_ok());
        report.push(StageCounts::new("c", 6, 5));
        assert!(matches!(report.check(), Err(FunnelError::Broken { .. })));
        let mut bad = FunnelReport::new();
        bad.push(StageCounts { stage: "x".into(), input: 5, kept: 3, removed: 1, reasons: BTreeMap::new() });
        assert!(matches!(bad.check(), Err(FunnelError::Unbalanced { .. })));
    }

    #[test]
    fn funnel_table_groups_thousands() {
        let mut report = FunnelReport::new();
        report.push(StageCounts::new("moderation", 1_000_000, 964_464));
        report.push(StageCounts::new("unknown_language", 964_464, 936_468));
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("Start") && lines[2].ends_with("1,000,000"));
        assert!(lines[3].starts_with("Moderation check") && lines[3].ends_with("964,464"));
        assert!(lines[4].ends_with("936,468"));
        let widths: BTreeSet<usize> = lines.iter().map(|l| l.chars().count()).collect();
        assert_eq!(widths.len(), 1, "rows are aligned:\n{table}");
    }

    #[test]
    fn funnel_jsonl_round_trip() {
        let mut report = FunnelReport::new();
        let mut s = StageCounts::new("language_confidence", 10, 6);
        s.reasons.insert("low_confidence".into(), 3);
        s.reasons.insert("detector_error".into(), 1);
        report.push(s);
        report.push(StageCounts::new("token_limit", 6, 6));
        let text = report.to_jsonl();
        assert!(text.lines().nth(1).unwrap().starts_with(r#"{"stage":"token_limit","input":6,"kept":6,"removed":0}"#));
        assert_eq!(FunnelReport::from_jsonl(&text).unwrap(), report);
    }

    #[test]
    fn embedding_normalizes() {
        let v = EmbeddingVector::new(vec![3.0, 4.0]).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-12);
        assert_eq!(v.as_slice(), &[0.6, 0.8]);
        assert_eq!(EmbeddingVector::new(vec![0.0, 0.0]), Err(ModelError::ZeroNormEmbedding));
        assert_eq!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(ModelError::NonFiniteEmbedding(1)));
        assert_eq!(EmbeddingVector::new(vec![]), Err(ModelError::EmptyEmbedding));
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!(cfg, PipelineConfig::with_seed(3));
        assert_eq!(cfg.confidence_threshold, 0.8);
        assert_eq!(cfg.token_limit, 512);
        assert_eq!(cfg.sample_cap, 25_000);
        assert_eq!(cfg.max_response_tokens, 2048);
        assert_eq!(cfg.temperature, 0.0);
        assert!(cfg.validate().is_ok());

        let err = serde_json::from_str::<PipelineConfig>("{}").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");

        let mut bad = cfg.clone();
        bad.dedup_threshold = 1.5;
        assert!(matches!(bad.validate(), Err(ConfigError::OutOfUnitRange { field: "dedup_threshold", .. })));
        let mut bad = cfg.clone();
        bad.keyword_list.push("GPT".into());
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.anonymization_pattern = Some("(".into());
        assert!(matches!(bad.validate(), Err(ConfigError::Pattern(_))));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = PipelineConfig::with_seed(1);
        let b = PipelineConfig::with_seed(2);
        assert_eq!(a.fingerprint(), PipelineConfig::with_seed(1).fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
