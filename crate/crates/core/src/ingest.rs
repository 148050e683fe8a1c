//! Streaming reader for line-delimited source corpora.
//!
//! Each line is one conversation:
//!
//! ```json
//! {"id": "c-1", "model": "vicuna-13b", "language": "English",
//!  "turns": [{"role": "human", "text": "..."}, {"role": "assistant", "text": "..."}],
//!  "moderation_flagged": false, "turn_token_counts": [12, 80]}
//! ```
//!
//! `turn_token_counts` is optional. Fields the reader does not know are kept in
//! [`RawRecord::extra`] and written back out unchanged.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::langid::Detection;
use crate::model::{validate_record, LanguageTag, MalformedRecord, RawRecord, Role, Turn};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("corpus file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("line {line_no}: {reason}")]
    MalformedLine { line_no: u64, reason: MalformedRecord },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    #[default]
    SkipBad,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Utf8Policy {
    /// Lines with invalid UTF-8 are malformed.
    #[default]
    Reject,
    /// Invalid sequences are replaced with U+FFFD before parsing.
    Repair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub strictness: Strictness,
    pub utf8: Utf8Policy,
    /// Reject repeated ids. Costs one stored id per accepted record.
    pub unique_ids: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { strictness: Strictness::SkipBad, utf8: Utf8Policy::Reject, unique_ids: true }
    }
}

impl IngestOptions {
    pub fn strict() -> Self {
        Self { strictness: Strictness::Abort, ..Self::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines_read: u64,
    pub records_accepted: u64,
    pub records_rejected: u64,
    pub rejection_breakdown: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireTurn {
    role: Role,
    #[serde(alias = "content")]
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    model: String,
    language: LanguageTag,
    turns: Vec<WireTurn>,
    moderation_flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    turn_token_counts: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detection: Option<Detection>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

/// Parses and validates one corpus line.
pub fn parse_record(line: &str) -> Result<RawRecord, MalformedRecord> {
    let wire: RecordLine =
        serde_json::from_str(line).map_err(|e| MalformedRecord::Schema(e.to_string()))?;
    let counts = match wire.turn_token_counts {
        Some(counts) if counts.len() != wire.turns.len() => {
            return Err(MalformedRecord::TokenCountMismatch {
                turns: wire.turns.len(),
                counts: counts.len(),
            })
        }
        Some(counts) => counts.into_iter().map(Some).collect(),
        None => vec![None; wire.turns.len()],
    };
    let turns = wire
        .turns
        .into_iter()
        .zip(counts)
        .map(|(t, token_count)| Turn { role: t.role, text: t.text, token_count })
        .collect();
    validate_record(RawRecord {
        id: wire.id,
        source_model: wire.model,
        language: wire.language,
        turns,
        moderation_flagged: wire.moderation_flagged,
        detection: wire.detection,
        extra: wire.extra,
    })
}

/// Serialises a record in the corpus line format (no trailing newline).
pub fn record_to_line(record: &RawRecord) -> String {
    let counts: Option<Vec<u32>> = record.turns.iter().map(|t| t.token_count).collect();
    let wire = RecordLine {
        id: record.id.clone(),
        model: record.source_model.clone(),
        language: record.language.clone(),
        turns: record
            .turns
            .iter()
            .map(|t| WireTurn { role: t.role, text: t.text.clone() })
            .collect(),
        moderation_flagged: record.moderation_flagged,
        turn_token_counts: counts,
        detection: record.detection.clone(),
        extra: record.extra.clone(),
    };
    serde_json::to_string(&wire).expect("record serializes")
}

/// Writes records one per line.
pub fn write_records<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a RawRecord>,
) -> io::Result<()> {
    for r in records {
        out.write_all(record_to_line(r).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Opens `path` and returns a streaming reader over its records.
pub fn read_corpus(
    path: impl AsRef<Path>,
    options: IngestOptions,
) -> Result<CorpusReader<BufReader<File>>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::FileNotFound(path.to_path_buf()),
        _ => IngestError::Io(e),
    })?;
    Ok(CorpusReader::new(BufReader::new(file), options))
}

/// Yields validated records in file order.
///
/// In [`Strictness::SkipBad`] mode malformed lines are counted and skipped and
/// only I/O failures surface as errors. In [`Strictness::Abort`] mode the first
/// malformed line is returned as [`IngestError::MalformedLine`] and the stream
/// ends. Blank lines are ignored and not counted.
pub struct CorpusReader<R> {
    reader: R,
    options: IngestOptions,
    buf: Vec<u8>,
    line_no: u64,
    seen: HashSet<String>,
    stats: IngestStats,
    done: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, options: IngestOptions) -> Self {
        Self {
            reader,
            options,
            buf: Vec::new(),
            line_no: 0,
            seen: HashSet::new(),
            stats: IngestStats::default(),
            done: false,
        }
    }

    /// Counters so far; final once the iterator returns `None`.
    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn into_stats(self) -> IngestStats {
        self.stats
    }

    /// Capacity of the reused line buffer, i.e. the longest line seen so far.
    pub fn line_buffer_capacity(&self) -> usize {
        self.buf.capacity()
    }

    fn decode_line(&self) -> Result<RawRecord, MalformedRecord> {
        let mut bytes = self.buf.as_slice();
        while let [rest @ .., b'\n' | b'\r'] = bytes {
            bytes = rest;
        }
        let text = match std::str::from_utf8(bytes) {
            Ok(s) => std::borrow::Cow::Borrowed(s),
            Err(_) if self.options.utf8 == Utf8Policy::Repair => String::from_utf8_lossy(bytes),
            Err(_) => return Err(MalformedRecord::InvalidUtf8),
        };
        parse_record(&text)
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<RawRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(IngestError::Io(e)));
                }
            }
            self.line_no += 1;
            if self.buf.iter().all(|b| b.is_ascii_whitespace()) {
                continue;
            }
            self.stats.lines_read += 1;
            let parsed = self.decode_line().and_then(|record| {
                if self.options.unique_ids && !self.seen.insert(record.id.clone()) {
                    Err(MalformedRecord::DuplicateId(record.id))
                } else {
                    Ok(record)
                }
            });
            match parsed {
                Ok(record) => {
                    self.stats.records_accepted += 1;
                    return Some(Ok(record));
                }
                Err(reason) => {
                    self.stats.records_rejected += 1;
                    *self.stats.rejection_breakdown.entry(reason.code().to_string()).or_default() +=
                        1;
                    if self.options.strictness == Strictness::Abort {
                        self.done = true;
                        return Some(Err(IngestError::MalformedLine { line_no: self.line_no, reason }));
                    }
                }
            }
        }
        None
    }
}

/// Counts tokens in a piece of text.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Deterministic stand-in for a model tokenizer: one token per maximal run of
/// word characters, per CJK ideograph or kana, and per punctuation mark or
/// symbol. Whitespace separates tokens and is not counted.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleTokenizer;

impl Tokenizer for RuleTokenizer {
    fn count(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_whitespace() {
                in_word = false;
            } else if is_cjk(c) {
                count += 1;
                in_word = false;
            } else if c.is_alphanumeric() || c == '_' {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
            } else if in_word && is_combining_mark(c) {
                // vowel signs and diacritics stay inside the current word
            } else {
                count += 1;
                in_word = false;
            }
        }
        count
    }
}

pub fn count_tokens(text: &str, tokenizer: &dyn Tokenizer) -> usize {
    tokenizer.count(text)
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x31F0..=0x31FF    // katakana phonetic extensions
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0xFF66..=0xFF9F    // halfwidth katakana
        | 0x20000..=0x3134F) // extensions B-G
}

fn is_combining_mark(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F
        | 0x0483..=0x0489
        | 0x0591..=0x05C7
        | 0x0610..=0x061A
        | 0x064B..=0x065F
        | 0x0670
        | 0x06D6..=0x06ED
        | 0x0900..=0x0DFF
        | 0x0E31..=0x0E4E
        | 0x0EB1..=0x0ECD
        | 0x0F18..=0x0FBC
        | 0x102B..=0x103E
        | 0x1AB0..=0x1AFF
        | 0x1DC0..=0x1DFF
        | 0x200C..=0x200D
        | 0x20D0..=0x20FF
        | 0xFE00..=0xFE0F
        | 0xFE20..=0xFE2F)
}
