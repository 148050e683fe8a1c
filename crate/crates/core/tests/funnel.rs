//! The cleaning funnel against an independent re-implementation of every
//! predicate, on a fixture with planted violations of each stage. The
//! wall-clock budget is checked by the CLI acceptance suite, which runs alone.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use curate_core::filters::{
    default_stages, run_funnel, ANONYMIZATION, LANGUAGE_CONFIDENCE, MODEL_KEYWORD, MODERATION, REASON_DETECTOR_ERROR,
    REASON_LOW_CONFIDENCE, TOKEN_LIMIT, UNKNOWN_LANGUAGE,
};
use curate_core::ingest::{read_corpus, IngestOptions, RuleTokenizer};
use curate_core::langid::NgramDetector;
use curate_core::{PipelineConfig, RawRecord};
use serde_json::Value;

mod common;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/funnel_2000.jsonl")
}

fn load() -> Vec<RawRecord> {
    read_corpus(fixture(), IngestOptions::strict()).unwrap().collect::<Result<_, _>>().unwrap()
}

#[test]
fn funnel_matches_independent_oracle() {
    let cfg = PipelineConfig::with_seed(1);
    let detector = NgramDetector::bundled();
    let text = std::fs::read_to_string(fixture()).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2000);

    let mut expected_kept = Vec::new();
    let mut removed: BTreeMap<&str, u64> = BTreeMap::new();
    let mut reasons: BTreeMap<&str, u64> = BTreeMap::new();
    for line in &lines {
        match common::funnel_verdict(line, &cfg, &detector) {
            (common::KEPT, _) => expected_kept.push(line["id"].as_str().unwrap().to_string()),
            (stage, reason) => {
                *removed.entry(stage).or_default() += 1;
                if stage == LANGUAGE_CONFIDENCE {
                    *reasons.entry(reason).or_default() += 1;
                }
            }
        }
    }

    let stages = default_stages(&cfg, Arc::new(detector), Arc::new(RuleTokenizer)).unwrap();
    let (kept, report) = run_funnel(load(), &stages, 0).unwrap();

    let kept_ids: Vec<String> = kept.iter().map(|r| r.id.clone()).collect();
    assert_eq!(kept_ids, expected_kept);
    report.check().unwrap();
    assert_eq!(report.start(), Some(2000));
    let order = [MODERATION, UNKNOWN_LANGUAGE, ANONYMIZATION, MODEL_KEYWORD, LANGUAGE_CONFIDENCE, TOKEN_LIMIT];
    assert_eq!(report.stages.iter().map(|s| s.stage.as_str()).collect::<Vec<_>>(), order);
    for stage in order {
        let got = report.stage(stage).unwrap().removed;
        assert_eq!(got, removed.get(stage).copied().unwrap_or(0), "{stage}");
        assert!(got > 0, "fixture plants violations of {stage}");
    }
    let conf = report.stage(LANGUAGE_CONFIDENCE).unwrap();
    for reason in [REASON_LOW_CONFIDENCE, REASON_DETECTOR_ERROR] {
        assert_eq!(conf.reasons.get(reason).copied().unwrap_or(0), reasons.get(reason).copied().unwrap_or(0));
        assert!(reasons.get(reason).copied().unwrap_or(0) > 0, "fixture plants {reason}");
    }
    assert!(kept.iter().all(|r| r.detection.is_some()));
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = PipelineConfig::with_seed(1);
    let stages = default_stages(&cfg, Arc::new(NgramDetector::bundled()), Arc::new(RuleTokenizer)).unwrap();
    let one = run_funnel(load(), &stages, 1).unwrap();
    let four = run_funnel(load(), &stages, 4).unwrap();
    assert_eq!(one, four);
}

#[test]
fn rerunning_survivors_removes_nothing() {
    let cfg = PipelineConfig::with_seed(1);
    let stages = default_stages(&cfg, Arc::new(NgramDetector::bundled()), Arc::new(RuleTokenizer)).unwrap();
    let (kept, _) = run_funnel(load(), &stages, 0).unwrap();
    let (again, report) = run_funnel(kept.clone(), &stages, 0).unwrap();
    assert_eq!(again, kept);
    assert!(report.stages.iter().all(|s| s.removed == 0));
}

#[test]
fn skipping_a_stage_never_removes_more() {
    let cfg = PipelineConfig::with_seed(1);
    let all = default_stages(&cfg, Arc::new(NgramDetector::bundled()), Arc::new(RuleTokenizer)).unwrap();
    let (full, _) = run_funnel(load(), &all, 0).unwrap();
    for skip in 0..all.len() {
        let mut stages = default_stages(&cfg, Arc::new(NgramDetector::bundled()), Arc::new(RuleTokenizer)).unwrap();
        stages.remove(skip);
        let (partial, report) = run_funnel(load(), &stages, 0).unwrap();
        report.check().unwrap();
        let ids: std::collections::HashSet<&str> = partial.iter().map(|r| r.id.as_str()).collect();
        assert!(full.iter().all(|r| ids.contains(r.id.as_str())));
    }
}
