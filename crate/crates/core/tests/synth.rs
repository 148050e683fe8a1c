//! Response generation against scripted providers.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use curate_core::report::{write_dataset, DatasetManifest, SourceBreakdown};
use curate_core::synth::{
    filter_incomplete, generate_responses, CompletionProvider, CompletionRequest, CompletionResult, MockProvider,
    PromptItem, ProviderError, RetryPolicy, SynthError, SynthOptions,
};
use curate_core::{FinishState, LanguageTag};
use serde_json::json;

fn prompts(n: usize) -> Vec<PromptItem> {
    (0..n)
        .map(|i| PromptItem {
            id: format!("p{i:03}"),
            language: LanguageTag::new(["English", "Korean"][i % 2]).unwrap(),
            text: format!("question number {i}"),
        })
        .collect()
}

/// Plants, by index modulo 10: 1 truncated, 4 retried then fine, 6 rejected,
/// 8 empty every time.
fn script(n: usize, delay_ms: u64) -> MockProvider {
    let mut scripts = serde_json::Map::new();
    for i in 0..n {
        let steps = match i % 10 {
            1 => json!([{"finish_reason": "length", "text": "cut"}]),
            4 => json!([{"error": "rate_limited"}, {"error": "transport"}, {"finish_reason": "complete", "text": "late"}]),
            6 => json!([{"error": "invalid_request", "message": "rejected"}]),
            8 => json!([{"finish_reason": "complete", "text": ""}]),
            _ => continue,
        };
        scripts.insert(format!("p{i:03}"), steps);
    }
    MockProvider::from_json(&json!({"delay_ms": delay_ms, "scripts": scripts}).to_string()).unwrap()
}

fn options(max_in_flight: usize) -> SynthOptions {
    SynthOptions {
        policy: RetryPolicy { max_attempts: 3, backoff_base: Duration::from_millis(1), backoff_factor: 2.0 },
        max_in_flight,
        ..SynthOptions::default()
    }
}

#[test]
fn planted_outcomes_are_counted_exactly() {
    let n = 200;
    let mock = script(n, 0);
    let outcome = generate_responses(&prompts(n), &mock, &options(4)).unwrap();
    assert_eq!(outcome.pairs.len(), n);
    let count = |s: FinishState| outcome.pairs.iter().filter(|p| p.finish_state == s).count();
    assert_eq!(count(FinishState::Truncated), 20);
    assert_eq!(count(FinishState::Unanswered), 40);
    assert_eq!(count(FinishState::Complete), 140);
    assert_eq!(outcome.stats.truncated, 20);
    assert_eq!(outcome.stats.unanswered, 40);
    for (i, (p, attempts)) in outcome.pairs.iter().zip(&outcome.attempts).enumerate() {
        assert_eq!(p.id, format!("p{i:03}"), "input order is kept");
        let expected = match i % 10 {
            4 | 8 => 3,
            _ => 1,
        };
        assert_eq!(*attempts, expected, "{}", p.id);
    }
    assert_eq!(mock.calls_for("p006"), 1, "invalid requests are not retried");

    let (kept, stage) = filter_incomplete(outcome.pairs);
    assert_eq!((stage.input, stage.kept, stage.removed), (200, 140, 60));
    let (again, stage2) = filter_incomplete(kept.clone());
    assert_eq!(again, kept);
    assert_eq!(stage2.removed, 0);
}

#[test]
fn in_flight_requests_never_exceed_the_bound() {
    for bound in [1, 2, 3, 8] {
        let mock = script(40, 3);
        generate_responses(&prompts(40), &mock, &options(bound)).unwrap();
        assert!(mock.peak_in_flight() <= bound, "peak {} > {bound}", mock.peak_in_flight());
        assert!(mock.peak_in_flight() >= 1);
    }
}

/// Raises the cancel flag once `after` calls have started.
struct Tripwire {
    inner: MockProvider,
    after: usize,
    calls: AtomicUsize,
    cancel: Arc<AtomicBool>,
}

impl CompletionProvider for Tripwire {
    fn complete(&self, id: &str, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) + 1 >= self.after {
            self.cancel.store(true, Ordering::SeqCst);
        }
        self.inner.complete(id, request)
    }
}

fn final_bytes(dir: &std::path::Path, name: &str, pairs: Vec<curate_core::PromptResponsePair>) -> Vec<u8> {
    let (kept, _) = filter_incomplete(pairs);
    let manifest = DatasetManifest::build(&kept, SourceBreakdown::Single("t".into()), "fp", 1).unwrap();
    let path = dir.join(name);
    write_dataset(&path, &kept, &manifest).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn interrupted_runs_resume_to_identical_output() {
    let n = 120;
    let dir = tempfile::tempdir().unwrap();
    let reference = generate_responses(&prompts(n), &script(n, 0), &options(4)).unwrap();
    let expected = final_bytes(dir.path(), "reference.jsonl", reference.pairs.clone());

    let checkpoint = dir.path().join("cp.jsonl");
    let cancel = Arc::new(AtomicBool::new(false));
    let trip = Tripwire { inner: script(n, 1), after: 37, calls: AtomicUsize::new(0), cancel: cancel.clone() };
    let opts = SynthOptions { checkpoint: Some(checkpoint.clone()), cancel: Some(cancel), ..options(4) };
    match generate_responses(&prompts(n), &trip, &opts) {
        Err(SynthError::Interrupted { finished, total }) => assert!(finished < total),
        other => panic!("expected interruption, got {other:?}"),
    }

    // Simulate a crash in the middle of a write.
    let mut log = std::fs::read(&checkpoint).unwrap();
    log.extend_from_slice(br#"{"id":"p119","finish_re"#);
    std::fs::write(&checkpoint, &log).unwrap();

    let resumed_mock = script(n, 0);
    let opts = SynthOptions { checkpoint: Some(checkpoint.clone()), ..options(3) };
    let resumed = generate_responses(&prompts(n), &resumed_mock, &opts).unwrap();
    assert!(resumed.stats.resumed > 0);
    assert_eq!(resumed.stats.requested + resumed.stats.resumed, n);
    assert_eq!(resumed.pairs, reference.pairs);
    assert_eq!(resumed.attempts, reference.attempts);
    assert_eq!(final_bytes(dir.path(), "resumed.jsonl", resumed.pairs), expected);

    let done = generate_responses(&prompts(n), &resumed_mock, &opts).unwrap();
    assert_eq!(done.stats.requested, 0, "a finished checkpoint needs no calls");
}

#[test]
fn corrupt_checkpoint_lines_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let checkpoint = dir.path().join("cp.jsonl");
    std::fs::write(&checkpoint, "not json\n").unwrap();
    let opts = SynthOptions { checkpoint: Some(checkpoint), ..options(2) };
    let err = generate_responses(&prompts(3), &script(3, 0), &opts).unwrap_err();
    assert!(matches!(err, SynthError::CorruptCheckpoint { line: 1, .. }), "{err:?}");
}
