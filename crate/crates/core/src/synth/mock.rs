//! File-driven offline provider.
//!
//! ```json
//! {
//!   "default": {"finish_reason": "complete", "text": "Echo {id}: {prompt}"},
//!   "delay_ms": 0,
//!   "scripts": {
//!     "p7": [{"error": "rate_limited"}, {"finish_reason": "complete", "text": "ok"}],
//!     "p9": [{"finish_reason": "length", "text": "cut"}]
//!   }
//! }
//! ```
//!
//! The n-th call for an id plays step n of its script; calls past the end
//! repeat the last step. Ids without a script get `default`. `{id}` and
//! `{prompt}` are substituted in reply text.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CompletionProvider, CompletionRequest, CompletionResult, FinishReason, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockErrorKind {
    RateLimited,
    Transport,
    Auth,
    InvalidRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockStep {
    Fail {
        error: MockErrorKind,
        #[serde(default)]
        message: String,
    },
    Reply {
        finish_reason: FinishReason,
        #[serde(default)]
        text: String,
    },
}

impl Default for MockStep {
    fn default() -> Self {
        MockStep::Reply { finish_reason: FinishReason::Complete, text: "Mock response to {id}: {prompt}".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFile {
    #[serde(default)]
    pub default: MockStep,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default)]
    pub scripts: BTreeMap<String, Vec<MockStep>>,
}

/// Scripted provider that also records call counts and peak concurrency.
#[derive(Debug, Default)]
pub struct MockProvider {
    file: MockFile,
    calls: Mutex<HashMap<String, usize>>,
    total_calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockProvider {
    pub fn new(file: MockFile) -> Self {
        Self { file, ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text).map(Self::new)
    }

    pub fn from_path(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))
    }

    pub fn total_calls(&self) -> usize {
        self.total_calls.load(Ordering::SeqCst)
    }

    pub fn calls_for(&self, id: &str) -> usize {
        self.calls.lock().expect("mock call table").get(id).copied().unwrap_or(0)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn step(&self, id: &str) -> MockStep {
        let n = {
            let mut calls = self.calls.lock().expect("mock call table");
            let n = calls.entry(id.to_string()).or_insert(0);
            *n += 1;
            *n - 1
        };
        match self.file.scripts.get(id) {
            Some(script) if !script.is_empty() => script[n.min(script.len() - 1)].clone(),
            _ => self.file.default.clone(),
        }
    }
}

impl CompletionProvider for MockProvider {
    fn complete(&self, id: &str, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        self.total_calls.fetch_add(1, Ordering::SeqCst);
        if self.file.delay_ms > 0 {
            thread::sleep(Duration::from_millis(self.file.delay_ms));
        }
        let result = match self.step(id) {
            MockStep::Fail { error, message } => Err(match error {
                MockErrorKind::RateLimited => ProviderError::RateLimited(message),
                MockErrorKind::Transport => ProviderError::Transport(message),
                MockErrorKind::Auth => ProviderError::Auth(message),
                MockErrorKind::InvalidRequest => ProviderError::InvalidRequest(message),
            }),
            MockStep::Reply { finish_reason, text } => {
                let text = text.replace("{id}", id).replace("{prompt}", request.prompt());
                Ok(CompletionResult::new(text, finish_reason))
            }
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripts_play_in_order_then_repeat() {
        let mock = MockProvider::from_json(
            r#"{"scripts": {"a": [{"error": "transport"}, {"finish_reason": "length", "text": "cut {id}"}]}}"#,
        )
        .unwrap();
        let req = CompletionRequest::single("hi", 0.0, 10).unwrap();
        assert!(matches!(mock.complete("a", &req), Err(ProviderError::Transport(_))));
        assert_eq!(mock.complete("a", &req).unwrap().text, "cut a");
        assert_eq!(mock.complete("a", &req).unwrap().finish_reason, FinishReason::Length);
        assert_eq!(mock.complete("b", &req).unwrap().text, "Mock response to b: hi");
        assert_eq!(mock.calls_for("a"), 3);
        assert_eq!(mock.total_calls(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(MockProvider::from_json(r#"{"defualt": {}}"#).is_err());
    }
}
