//! Response generation through a pluggable chat-completion provider.
//!
//! [`generate_responses`] fans requests out to at most `max_in_flight`
//! workers, retries retryable failures with exponential backoff, and funnels
//! every result through one collector that appends it to an optional
//! checkpoint log. Rerunning with the same checkpoint skips finished ids.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{FinishState, LanguageTag, PromptResponsePair, Role, StageCounts};

mod http;
mod mock;

pub use http::{HttpProvider, DEFAULT_API_KEY_ENV};
pub use mock::{MockFile, MockProvider, MockStep};

pub const INCOMPLETE: &str = "incomplete";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// One human message.
    pub fn single(prompt: impl Into<String>, temperature: f64, max_tokens: u32) -> Result<Self, SynthError> {
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(SynthError::InvalidOptions(format!("temperature {temperature} is negative")));
        }
        if max_tokens == 0 {
            return Err(SynthError::InvalidOptions("max_tokens must be at least 1".into()));
        }
        Ok(Self {
            messages: vec![Message { role: Role::Human, text: prompt.into() }],
            temperature,
            max_tokens,
        })
    }

    pub fn prompt(&self) -> &str {
        self.messages.first().map_or("", |m| m.text.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Complete,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    pub provider_meta: BTreeMap<String, Value>,
}

impl CompletionResult {
    pub fn new(text: impl Into<String>, finish_reason: FinishReason) -> Self {
        Self { text: text.into(), finish_reason, provider_meta: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::RateLimited(_) | Self::Transport(_))
    }
}

/// A chat-completion backend. Must tolerate concurrent calls.
pub trait CompletionProvider: Send + Sync {
    fn complete(&self, id: &str, request: &CompletionRequest) -> Result<CompletionResult, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_base: Duration::from_millis(500), backoff_factor: 2.0 }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.max_attempts == 0 {
            return Err(SynthError::InvalidOptions("max_attempts must be at least 1".into()));
        }
        if !(self.backoff_factor >= 1.0 && self.backoff_factor.is_finite()) {
            return Err(SynthError::InvalidOptions("backoff_factor must be at least 1".into()));
        }
        Ok(())
    }

    /// Wait before attempt `attempt + 1`, given `attempt` failures so far.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(1).min(30) as i32;
        self.backoff_base.mul_f64(self.backoff_factor.powi(exp))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptItem {
    pub id: String,
    pub language: LanguageTag,
    pub text: String,
}

/// One line of the checkpoint log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub id: String,
    pub finish_reason: FinishReason,
    pub text: String,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckpointEntry {
    pub fn finish_state(&self) -> FinishState {
        match self.finish_reason {
            FinishReason::Complete if !self.text.is_empty() => FinishState::Complete,
            FinishReason::Length => FinishState::Truncated,
            _ => FinishState::Unanswered,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation options: {0}")]
    InvalidOptions(String),
    #[error("duplicate prompt id {0:?}")]
    DuplicateId(String),
    #[error("checkpoint {path}: line {line} is corrupt: {message}")]
    CorruptCheckpoint { path: PathBuf, line: usize, message: String },
    #[error("interrupted after {finished} of {total} prompts")]
    Interrupted { finished: usize, total: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Append-only log of finished requests.
pub struct Checkpoint {
    file: File,
    entries: BTreeMap<String, CheckpointEntry>,
}

impl Checkpoint {
    /// Opens or creates the log. A torn final line (no trailing newline) is
    /// cut off; any other unreadable line is an error.
    pub fn open(path: &Path) -> Result<Self, SynthError> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let complete_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete_len < bytes.len() {
            file.set_len(complete_len as u64)?;
        }
        let mut entries = BTreeMap::new();
        for (i, line) in bytes[..complete_len].split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let entry: CheckpointEntry = serde_json::from_slice(line).map_err(|e| {
                SynthError::CorruptCheckpoint { path: path.to_path_buf(), line: i + 1, message: e.to_string() }
            })?;
            entries.entry(entry.id.clone()).or_insert(entry);
        }
        Ok(Self { file, entries })
    }

    pub fn entries(&self) -> &BTreeMap<String, CheckpointEntry> {
        &self.entries
    }

    fn append(&mut self, entry: &CheckpointEntry) -> Result<(), SynthError> {
        let mut line = serde_json::to_vec(entry).expect("entry serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        self.entries.insert(entry.id.clone(), entry.clone());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub policy: RetryPolicy,
    pub max_in_flight: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub checkpoint: Option<PathBuf>,
    /// When raised, no new requests start; in-flight ones are still recorded.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            policy: RetryPolicy::default(),
            max_in_flight: 4,
            temperature: 0.0,
            max_tokens: 2048,
            checkpoint: None,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthStats {
    pub requested: usize,
    pub resumed: usize,
    pub complete: usize,
    pub truncated: usize,
    pub unanswered: usize,
    /// Prompts whose last attempt ended in a provider error.
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    /// One pair per prompt, in input order.
    pub pairs: Vec<PromptResponsePair>,
    /// Attempts spent on each pair, as logged for resumed ids.
    pub attempts: Vec<u32>,
    pub stats: SynthStats,
}

fn request_with_retries(
    provider: &dyn CompletionProvider,
    id: &str,
    request: &CompletionRequest,
    policy: &RetryPolicy,
) -> CheckpointEntry {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let (retryable, entry) = match provider.complete(id, request) {
            Ok(r) if r.finish_reason == FinishReason::Complete && r.text.is_empty() => (
                true,
                CheckpointEntry {
                    id: id.to_string(),
                    finish_reason: FinishReason::Error,
                    text: String::new(),
                    attempts,
                    error: Some("empty completion".into()),
                },
            ),
            Ok(r) => (
                false,
                CheckpointEntry { id: id.to_string(), finish_reason: r.finish_reason, text: r.text, attempts, error: None },
            ),
            Err(e) => (
                e.is_retryable(),
                CheckpointEntry {
                    id: id.to_string(),
                    finish_reason: FinishReason::Error,
                    text: String::new(),
                    attempts,
                    error: Some(e.to_string()),
                },
            ),
        };
        if !retryable || attempts >= policy.max_attempts {
            return entry;
        }
        thread::sleep(policy.delay(attempts));
    }
}

/// Requests a response for every prompt not already in the checkpoint.
pub fn generate_responses(
    prompts: &[PromptItem],
    provider: &dyn CompletionProvider,
    options: &SynthOptions,
) -> Result<SynthOutcome, SynthError> {
    options.policy.validate()?;
    if options.max_in_flight == 0 {
        return Err(SynthError::InvalidOptions("max_in_flight must be at least 1".into()));
    }
    let mut seen = HashSet::with_capacity(prompts.len());
    if let Some(dup) = prompts.iter().find(|p| !seen.insert(p.id.as_str())) {
        return Err(SynthError::DuplicateId(dup.id.clone()));
    }

    let mut checkpoint = options.checkpoint.as_deref().map(Checkpoint::open).transpose()?;
    let mut finished: BTreeMap<String, CheckpointEntry> = BTreeMap::new();
    if let Some(cp) = &checkpoint {
        for p in prompts {
            if let Some(e) = cp.entries().get(&p.id) {
                finished.insert(p.id.clone(), e.clone());
            }
        }
    }
    let resumed = finished.len();
    let pending: Vec<usize> = (0..prompts.len()).filter(|&i| !finished.contains_key(&prompts[i].id)).collect();
    let requests: Vec<CompletionRequest> = pending
        .iter()
        .map(|&i| CompletionRequest::single(prompts[i].text.clone(), options.temperature, options.max_tokens))
        .collect::<Result<_, _>>()?;

    let cursor = AtomicUsize::new(0);
    let never = AtomicBool::new(false);
    let cancel: &AtomicBool = options.cancel.as_deref().unwrap_or(&never);
    let workers = options.max_in_flight.min(pending.len());
    let mut write_error = None;
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<CheckpointEntry>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (cursor, pending, requests) = (&cursor, &pending, &requests);
            scope.spawn(move || loop {
                if cancel.load(Ordering::SeqCst) {
                    break;
                }
                let k = cursor.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(k) else { break };
                let entry = request_with_retries(provider, &prompts[i].id, &requests[k], &options.policy);
                if tx.send(entry).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for entry in rx {
            if let Some(cp) = checkpoint.as_mut() {
                if write_error.is_none() {
                    if let Err(e) = cp.append(&entry) {
                        write_error = Some(e);
                        cancel_local(&cursor, pending.len());
                    }
                }
            }
            finished.insert(entry.id.clone(), entry);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    if finished.len() < prompts.len() {
        return Err(SynthError::Interrupted { finished: finished.len(), total: prompts.len() });
    }

    let mut stats = SynthStats { requested: pending.len(), resumed, ..SynthStats::default() };
    let mut pairs = Vec::with_capacity(prompts.len());
    let mut attempts = Vec::with_capacity(prompts.len());
    for p in prompts {
        let entry = finished.remove(&p.id).expect("every prompt finished");
        let finish_state = entry.finish_state();
        match finish_state {
            FinishState::Complete => stats.complete += 1,
            FinishState::Truncated => stats.truncated += 1,
            FinishState::Unanswered => stats.unanswered += 1,
        }
        if entry.finish_reason == FinishReason::Error {
            stats.errors += 1;
        }
        attempts.push(entry.attempts);
        pairs.push(PromptResponsePair {
            id: p.id.clone(),
            language: p.language.clone(),
            prompt: p.text.clone(),
            response: entry.text,
            finish_state,
        });
    }
    Ok(SynthOutcome { pairs, attempts, stats })
}

/// Exhausts the shared cursor so workers stop picking up new prompts.
fn cancel_local(cursor: &AtomicUsize, len: usize) {
    cursor.fetch_max(len, Ordering::SeqCst);
}

/// Keeps complete pairs with a non-empty response.
pub fn filter_incomplete(pairs: Vec<PromptResponsePair>) -> (Vec<PromptResponsePair>, StageCounts) {
    let input = pairs.len() as u64;
    let kept: Vec<PromptResponsePair> = pairs.into_iter().filter(PromptResponsePair::is_complete).collect();
    let stage = StageCounts::new(INCOMPLETE, input, kept.len() as u64);
    (kept, stage)
}
