//! The ordered cleaning funnel.
//!
//! Each [`FilterStage`] is a pure keep/drop decision over one record. A
//! [`Funnel`] applies the stages in order, stops at the first drop, and keeps
//! per-stage counts. Records may be evaluated on several threads but counts
//! and output order are always those of the sequential pass.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use regex::Regex;
use thiserror::Error;

use crate::ingest::{RuleTokenizer, Tokenizer};
use crate::langid::{Detection, LanguageDetector};
use crate::model::{fold_case, FunnelReport, PipelineConfig, RawRecord, StageCounts};
use crate::par::Workers;

pub const MODERATION: &str = "moderation";
pub const UNKNOWN_LANGUAGE: &str = "unknown_language";
pub const ANONYMIZATION: &str = "anonymization";
pub const MODEL_KEYWORD: &str = "model_keyword";
pub const LANGUAGE_CONFIDENCE: &str = "language_confidence";
pub const TOKEN_LIMIT: &str = "token_limit";

pub const REASON_LOW_CONFIDENCE: &str = "low_confidence";
pub const REASON_DETECTOR_ERROR: &str = "detector_error";

const CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("the funnel needs at least one stage")]
    NoStages,
    #[error("invalid anonymization pattern: {0}")]
    Pattern(#[from] regex::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Keep,
    /// Keep and attach the detector's view of the record.
    KeepWith(Detection),
    Drop(&'static str),
}

pub trait FilterStage: Send + Sync {
    fn name(&self) -> &str;

    fn evaluate(&self, record: &RawRecord) -> Verdict;

    /// Drop reasons reported separately in the funnel. Stages with a single
    /// reason leave this empty.
    fn reasons(&self) -> &'static [&'static str] {
        &[]
    }
}

pub struct ModerationFilter;

impl FilterStage for ModerationFilter {
    fn name(&self) -> &str {
        MODERATION
    }

    fn evaluate(&self, record: &RawRecord) -> Verdict {
        if record.moderation_flagged {
            Verdict::Drop(MODERATION)
        } else {
            Verdict::Keep
        }
    }
}

pub struct UnknownLanguageFilter {
    pub unknown: BTreeSet<String>,
}

impl FilterStage for UnknownLanguageFilter {
    fn name(&self) -> &str {
        UNKNOWN_LANGUAGE
    }

    fn evaluate(&self, record: &RawRecord) -> Verdict {
        if record.language.is_in(&self.unknown) {
            Verdict::Drop(UNKNOWN_LANGUAGE)
        } else {
            Verdict::Keep
        }
    }
}

/// Drops prompts containing the anonymisation marker after case folding, or
/// matching `pattern` when one is configured instead.
pub struct AnonymizationFilter {
    marker: String,
    pattern: Option<Regex>,
}

impl AnonymizationFilter {
    pub fn substring(marker: &str) -> Self {
        Self { marker: fold_case(marker), pattern: None }
    }

    pub fn pattern(pattern: &str) -> Result<Self, regex::Error> {
        Ok(Self { marker: String::new(), pattern: Some(Regex::new(pattern)?) })
    }
}

impl FilterStage for AnonymizationFilter {
    fn name(&self) -> &str {
        ANONYMIZATION
    }

    fn evaluate(&self, record: &RawRecord) -> Verdict {
        let hit = match &self.pattern {
            Some(re) => re.is_match(record.prompt_text()),
            None => fold_case(record.prompt_text()).contains(&self.marker),
        };
        if hit {
            Verdict::Drop(ANONYMIZATION)
        } else {
            Verdict::Keep
        }
    }
}

pub struct ModelKeywordFilter {
    keywords: Vec<String>,
}

impl ModelKeywordFilter {
    pub fn new<S: AsRef<str>>(keywords: &[S]) -> Self {
        Self { keywords: keywords.iter().map(|k| fold_case(k.as_ref())).collect() }
    }
}

impl FilterStage for ModelKeywordFilter {
    fn name(&self) -> &str {
        MODEL_KEYWORD
    }

    fn evaluate(&self, record: &RawRecord) -> Verdict {
        let prompt = fold_case(record.prompt_text());
        if self.keywords.iter().any(|k| prompt.contains(k.as_str())) {
            Verdict::Drop(MODEL_KEYWORD)
        } else {
            Verdict::Keep
        }
    }
}

/// Drops records whose labeled language gets less than `threshold` of the
/// detector's probability mass on the first prompt.
pub struct ConfidenceFilter {
    detector: Arc<dyn LanguageDetector>,
    threshold: f64,
}

impl ConfidenceFilter {
    pub fn new(detector: Arc<dyn LanguageDetector>, threshold: f64) -> Self {
        Self { detector, threshold }
    }
}

impl FilterStage for ConfidenceFilter {
    fn name(&self) -> &str {
        LANGUAGE_CONFIDENCE
    }

    fn evaluate(&self, record: &RawRecord) -> Verdict {
        match self.detector.assess(record.prompt_text(), &record.language) {
            Err(_) => Verdict::Drop(REASON_DETECTOR_ERROR),
            Ok((mass, _)) if mass < self.threshold => Verdict::Drop(REASON_LOW_CONFIDENCE),
            Ok((_, detection)) => Verdict::KeepWith(detection),
        }
    }

    fn reasons(&self) -> &'static [&'static str] {
        &[REASON_DETECTOR_ERROR, REASON_LOW_CONFIDENCE]
    }
}

/// Drops records whose first prompt plus first response exceed `limit`
/// tokens. Source token counts are used when present.
pub struct TokenLimitFilter {
    tokenizer: Arc<dyn Tokenizer>,
    limit: u32,
}

impl TokenLimitFilter {
    pub fn new(tokenizer: Arc<dyn Tokenizer>, limit: u32) -> Self {
        Self { tokenizer, limit }
    }

    pub fn total_tokens(&self, record: &RawRecord) -> u64 {
        let count = |turn: Option<&crate::model::Turn>| {
            turn.map_or(0, |t| t.token_count.map_or_else(|| self.tokenizer.count(&t.text) as u64, u64::from))
        };
        count(record.first_prompt()) + count(record.first_response())
    }
}

impl FilterStage for TokenLimitFilter {
    fn name(&self) -> &str {
        TOKEN_LIMIT
    }

    fn evaluate(&self, record: &RawRecord) -> Verdict {
        if self.total_tokens(record) > u64::from(self.limit) {
            Verdict::Drop(TOKEN_LIMIT)
        } else {
            Verdict::Keep
        }
    }
}

/// The six stages in their standard order.
pub fn default_stages(
    config: &PipelineConfig,
    detector: Arc<dyn LanguageDetector>,
    tokenizer: Arc<dyn Tokenizer>,
) -> Result<Vec<Box<dyn FilterStage>>, FilterError> {
    let anonymization = match &config.anonymization_pattern {
        Some(pattern) => AnonymizationFilter::pattern(pattern)?,
        None => AnonymizationFilter::substring(&config.anonymization_marker),
    };
    Ok(vec![
        Box::new(ModerationFilter),
        Box::new(UnknownLanguageFilter { unknown: config.unknown_languages.clone() }),
        Box::new(anonymization),
        Box::new(ModelKeywordFilter::new(&config.keyword_list)),
        Box::new(ConfidenceFilter::new(detector, config.confidence_threshold)),
        Box::new(TokenLimitFilter::new(tokenizer, config.token_limit)),
    ])
}

/// [`default_stages`] with the bundled detector and the rule tokenizer.
pub fn standard_stages(config: &PipelineConfig) -> Result<Vec<Box<dyn FilterStage>>, FilterError> {
    default_stages(
        config,
        Arc::new(crate::langid::NgramDetector::bundled()),
        Arc::new(RuleTokenizer),
    )
}

enum Outcome {
    Kept(RawRecord),
    Dropped { stage: usize, reason: &'static str },
}

fn evaluate_all(stages: &[Box<dyn FilterStage>], mut record: RawRecord) -> Outcome {
    for (i, stage) in stages.iter().enumerate() {
        match stage.evaluate(&record) {
            Verdict::Keep => {}
            Verdict::KeepWith(detection) => record.detection = Some(detection),
            Verdict::Drop(reason) => return Outcome::Dropped { stage: i, reason },
        }
    }
    Outcome::Kept(record)
}

/// Incremental funnel: feed records in chunks, then take the report.
pub struct Funnel<'a> {
    stages: &'a [Box<dyn FilterStage>],
    input: u64,
    dropped: Vec<u64>,
    reasons: Vec<BTreeMap<String, u64>>,
    workers: Workers,
}

impl<'a> Funnel<'a> {
    pub fn new(stages: &'a [Box<dyn FilterStage>], workers: usize) -> Result<Self, FilterError> {
        if stages.is_empty() {
            return Err(FilterError::NoStages);
        }
        let reasons = stages
            .iter()
            .map(|s| s.reasons().iter().map(|r| (r.to_string(), 0)).collect())
            .collect();
        Ok(Self {
            stages,
            input: 0,
            dropped: vec![0; stages.len()],
            reasons,
            workers: Workers::new(workers),
        })
    }

    /// Filters one chunk, returning the survivors in input order.
    pub fn process(&mut self, chunk: Vec<RawRecord>) -> Vec<RawRecord> {
        self.input += chunk.len() as u64;
        let stages = self.stages;
        let outcomes: Vec<Outcome> = if chunk.len() > 1 {
            self.workers
                .install(|| chunk.into_par_iter().map(|r| evaluate_all(stages, r)).collect())
        } else {
            chunk.into_iter().map(|r| evaluate_all(stages, r)).collect()
        };
        let mut kept = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            match outcome {
                Outcome::Kept(record) => kept.push(record),
                Outcome::Dropped { stage, reason } => {
                    self.dropped[stage] += 1;
                    if let Some(count) = self.reasons[stage].get_mut(reason) {
                        *count += 1;
                    }
                }
            }
        }
        kept
    }

    pub fn report(&self) -> FunnelReport {
        let mut report = FunnelReport::new();
        let mut remaining = self.input;
        for (i, stage) in self.stages.iter().enumerate() {
            let kept = remaining - self.dropped[i];
            let mut counts = StageCounts::new(stage.name(), remaining, kept);
            counts.reasons = self.reasons[i].clone();
            report.push(counts);
            remaining = kept;
        }
        report
    }
}

/// Runs every record through `stages`, returning survivors in input order.
pub fn run_funnel<I>(
    records: I,
    stages: &[Box<dyn FilterStage>],
    workers: usize,
) -> Result<(Vec<RawRecord>, FunnelReport), FilterError>
where
    I: IntoIterator<Item = RawRecord>,
{
    let mut funnel = Funnel::new(stages, workers)?;
    let mut kept = Vec::new();
    let mut chunk = Vec::with_capacity(CHUNK);
    for record in records {
        chunk.push(record);
        if chunk.len() == CHUNK {
            kept.extend(funnel.process(std::mem::replace(&mut chunk, Vec::with_capacity(CHUNK))));
        }
    }
    kept.extend(funnel.process(chunk));
    Ok((kept, funnel.report()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langid::LangIdError;
    use crate::model::{LanguageTag, Turn};

    fn tag(s: &str) -> LanguageTag {
        LanguageTag::new(s).unwrap()
    }

    fn rec(id: &str, lang: &str, prompt: &str) -> RawRecord {
        RawRecord::new(id, tag(lang), vec![Turn::human(prompt)], false)
    }

    /// Detector returning a fixed mass for its one supported language.
    struct FixedDetector(f64);

    impl LanguageDetector for FixedDetector {
        fn distribution(&self, _: &str) -> Result<Vec<(LanguageTag, f64)>, LangIdError> {
            Ok(vec![(tag("English"), self.0), (tag("French"), 1.0 - self.0)])
        }

        fn supports(&self, language: &LanguageTag) -> bool {
            language.as_str() == "English" || language.as_str() == "French"
        }
    }

    #[test]
    fn moderation_rule() {
        let mut r = rec("1", "English", "hi");
        assert_eq!(ModerationFilter.evaluate(&r), Verdict::Keep);
        r.moderation_flagged = true;
        assert_eq!(ModerationFilter.evaluate(&r), Verdict::Drop(MODERATION));
    }

    #[test]
    fn unknown_languages() {
        let f = UnknownLanguageFilter { unknown: PipelineConfig::with_seed(0).unknown_languages };
        assert!(matches!(f.evaluate(&rec("1", "Klingon", "x")), Verdict::Drop(_)));
        assert!(matches!(f.evaluate(&rec("1", "zzp", "x")), Verdict::Drop(_)));
        assert_eq!(f.evaluate(&rec("1", "French", "x")), Verdict::Keep);
    }

    #[test]
    fn anonymization_substring() {
        let f = AnonymizationFilter::substring("name");
        assert!(matches!(f.evaluate(&rec("1", "English", "Hello NAME0, how are you?")), Verdict::Drop(_)));
        assert!(matches!(f.evaluate(&rec("1", "English", "Name a few rivers")), Verdict::Drop(_)));
        assert_eq!(f.evaluate(&rec("1", "English", "What is the capital of Peru?")), Verdict::Keep);
    }

    #[test]
    fn anonymization_pattern_variant() {
        let f = AnonymizationFilter::pattern(r"\bNAME\d+\b").unwrap();
        assert!(matches!(f.evaluate(&rec("1", "English", "Hello NAME0")), Verdict::Drop(_)));
        assert_eq!(f.evaluate(&rec("1", "English", "Name a few rivers")), Verdict::Keep);
    }

    #[test]
    fn only_the_first_prompt_is_scanned() {
        let f = ModelKeywordFilter::new(&["gpt"]);
        let mut r = rec("1", "English", "Tell me about horses");
        r.turns.push(Turn::assistant("As a GPT model..."));
        r.turns.push(Turn::human("what about gpt?"));
        assert_eq!(f.evaluate(&r), Verdict::Keep);
    }

    #[test]
    fn model_keywords() {
        let f = ModelKeywordFilter::new(&PipelineConfig::with_seed(0).keyword_list);
        assert!(matches!(f.evaluate(&rec("1", "English", "How good is Llama 3?")), Verdict::Drop(_)));
        assert!(matches!(f.evaluate(&rec("1", "English", "Tell me about alpacas")), Verdict::Drop(_)));
        assert_eq!(f.evaluate(&rec("1", "English", "Tell me about horses")), Verdict::Keep);
    }

    #[test]
    fn confidence_boundaries() {
        for (mass, keep) in [(0.99, true), (0.79, false), (0.8, true)] {
            let f = ConfidenceFilter::new(Arc::new(FixedDetector(mass)), 0.8);
            let v = f.evaluate(&rec("1", "English", "text"));
            assert_eq!(matches!(v, Verdict::KeepWith(_)), keep, "mass {mass}");
        }
    }

    #[test]
    fn confidence_uses_labeled_language_mass() {
        // The argmax (French, 0.85) clears the threshold but the labeled
        // language does not.
        let f = ConfidenceFilter::new(Arc::new(FixedDetector(0.15)), 0.8);
        assert_eq!(f.evaluate(&rec("1", "English", "text")), Verdict::Drop(REASON_LOW_CONFIDENCE));
        match f.evaluate(&rec("2", "French", "text")) {
            Verdict::KeepWith(d) => assert_eq!(d.language, tag("French")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detector_failure_drops() {
        let f = ConfidenceFilter::new(Arc::new(FixedDetector(1.0)), 0.8);
        assert_eq!(f.evaluate(&rec("1", "German", "text")), Verdict::Drop(REASON_DETECTOR_ERROR));
        let bundled = ConfidenceFilter::new(Arc::new(crate::langid::NgramDetector::bundled()), 0.8);
        assert_eq!(bundled.evaluate(&rec("1", "English", "   ")), Verdict::Drop(REASON_DETECTOR_ERROR));
    }

    #[test]
    fn token_limit_boundaries() {
        let f = TokenLimitFilter::new(Arc::new(RuleTokenizer), 512);
        let with = |p: u32, r: Option<u32>| {
            let mut turns = vec![Turn::human("p").with_tokens(p)];
            if let Some(r) = r {
                turns.push(Turn::assistant("r").with_tokens(r));
            }
            RawRecord::new("1", tag("English"), turns, false)
        };
        assert_eq!(f.evaluate(&with(300, Some(213))), Verdict::Drop(TOKEN_LIMIT));
        assert_eq!(f.evaluate(&with(300, Some(212))), Verdict::Keep);
        assert_eq!(f.evaluate(&with(1, None)), Verdict::Keep);
        let counted = RawRecord::new("1", tag("English"), vec![Turn::human("hello world")], false);
        assert_eq!(f.total_tokens(&counted), 2);
    }

    #[test]
    fn funnel_counts_and_order() {
        let stages: Vec<Box<dyn FilterStage>> = vec![
            Box::new(ModerationFilter),
            Box::new(ModelKeywordFilter::new(&["gpt"])),
        ];
        let mut records: Vec<RawRecord> =
            (0..10).map(|i| rec(&i.to_string(), "English", "plain")).collect();
        for i in [1, 4, 7] {
            records[i].moderation_flagged = true;
        }
        records[2].turns[0].text = "ask gpt".into();
        let (kept, report) = run_funnel(records, &stages, 1).unwrap();
        assert_eq!(kept.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["0", "3", "5", "6", "8", "9"]);
        report.check().unwrap();
        assert_eq!(report.stage(MODERATION).unwrap().kept, 7);
        assert_eq!(report.stage(MODEL_KEYWORD).unwrap().removed, 1);
    }

    #[test]
    fn empty_stage_list_is_an_error() {
        assert!(matches!(run_funnel(Vec::new(), &[], 1), Err(FilterError::NoStages)));
    }

    #[test]
    fn confidence_stage_reports_both_reasons() {
        let stages: Vec<Box<dyn FilterStage>> =
            vec![Box::new(ConfidenceFilter::new(Arc::new(FixedDetector(0.5)), 0.8))];
        let records = vec![rec("1", "English", "a"), rec("2", "German", "b")];
        let (_, report) = run_funnel(records, &stages, 1).unwrap();
        let s = report.stage(LANGUAGE_CONFIDENCE).unwrap();
        assert_eq!(s.reasons[REASON_LOW_CONFIDENCE], 1);
        assert_eq!(s.reasons[REASON_DETECTOR_ERROR], 1);
    }
}
