//! Dataset assembly and emission.
//!
//! Datasets are JSONL files of two-turn conversations:
//!
//! ```text
//! {"id": "...", "language": "...", "conversations": [
//!     {"from": "human", "value": "<prompt>"}, {"from": "gpt", "value": "<response>"}]}
//! ```
//!
//! with a `<file>.manifest.json` next to each one.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FinishState, LanguageTag, PromptResponsePair};
use crate::rng::{keyed_rng, shuffle};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("id {id:?} appears in both {first:?} and {second:?}")]
    DuplicateId { id: String, first: String, second: String },
    #[error("dataset name {0:?} is used twice")]
    DuplicateSource(String),
    #[error("pair {0:?} is not complete")]
    Incomplete(String),
    #[error("source counts sum to {sources} but the dataset has {total} pairs")]
    SourceMismatch { sources: u64, total: u64 },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub total_pairs: u64,
    pub per_language_counts: BTreeMap<String, u64>,
    pub source_breakdown: BTreeMap<String, u64>,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl DatasetManifest {
    /// Counts `pairs`; every pair is attributed to `source` unless a
    /// breakdown is supplied.
    pub fn build(
        pairs: &[PromptResponsePair],
        sources: SourceBreakdown,
        config_fingerprint: impl Into<String>,
        seed: u64,
    ) -> Result<Self, ReportError> {
        let total = pairs.len() as u64;
        let source_breakdown = match sources {
            SourceBreakdown::Single(name) => BTreeMap::from([(name, total)]),
            SourceBreakdown::Counts(counts) => counts,
        };
        let sum: u64 = source_breakdown.values().sum();
        if sum != total {
            return Err(ReportError::SourceMismatch { sources: sum, total });
        }
        let per_language_counts = language_distribution(pairs)
            .into_iter()
            .map(|(tag, n)| (tag.to_string(), n as u64))
            .collect();
        Ok(Self {
            total_pairs: total,
            per_language_counts,
            source_breakdown,
            config_fingerprint: config_fingerprint.into(),
            seed,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceBreakdown {
    Single(String),
    Counts(BTreeMap<String, u64>),
}

/// Counts per language, largest first, ties by tag.
pub fn language_distribution(pairs: &[PromptResponsePair]) -> Vec<(LanguageTag, usize)> {
    let mut counts: BTreeMap<&LanguageTag, usize> = BTreeMap::new();
    for p in pairs {
        *counts.entry(&p.language).or_default() += 1;
    }
    let mut dist: Vec<(LanguageTag, usize)> = counts.into_iter().map(|(t, n)| (t.clone(), n)).collect();
    dist.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    dist
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal bar chart of the `top_k` largest languages as an SVG document.
pub fn distribution_svg(dist: &[(LanguageTag, usize)], top_k: usize) -> String {
    const ROW: usize = 22;
    const LABEL: usize = 140;
    const BAR: usize = 420;
    const TOP: usize = 40;
    let rows = &dist[..dist.len().min(top_k)];
    let max = rows.iter().map(|r| r.1).max().unwrap_or(0).max(1);
    let width = LABEL + BAR + 90;
    let height = TOP + rows.len() * ROW + 20;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" font-size="14">Prompt-response pairs per language</text>"#, LABEL);
    for (i, (tag, count)) in rows.iter().enumerate() {
        let y = TOP + i * ROW;
        let len = (*count as f64 / max as f64 * BAR as f64).round() as usize;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL - 8,
            y + 14,
            xml_escape(tag.as_str())
        );
        let _ = writeln!(svg, r##"<rect x="{LABEL}" y="{}" width="{len}" height="{}" fill="#4c72b0"/>"##, y + 3, ROW - 6);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{count}</text>"#, LABEL + len + 6, y + 14);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Concatenates named datasets and shuffles them with the `(seed, "blend")`
/// stream. Ids must be unique across all inputs.
pub fn blend_datasets(
    datasets: Vec<(String, Vec<PromptResponsePair>)>,
    seed: u64,
    config_fingerprint: impl Into<String>,
) -> Result<(Vec<PromptResponsePair>, DatasetManifest), ReportError> {
    let mut owner: HashMap<String, usize> = HashMap::new();
    let mut breakdown = BTreeMap::new();
    for (k, (name, pairs)) in datasets.iter().enumerate() {
        if breakdown.insert(name.clone(), pairs.len() as u64).is_some() {
            return Err(ReportError::DuplicateSource(name.clone()));
        }
        for p in pairs {
            if let Some(&first) = owner.get(&p.id) {
                return Err(ReportError::DuplicateId {
                    id: p.id.clone(),
                    first: datasets[first].0.clone(),
                    second: name.clone(),
                });
            }
            owner.insert(p.id.clone(), k);
        }
    }
    let mut all: Vec<PromptResponsePair> = datasets.into_iter().flat_map(|(_, p)| p).collect();
    shuffle(&mut keyed_rng(seed, "blend"), &mut all);
    let manifest = DatasetManifest::build(&all, SourceBreakdown::Counts(breakdown), config_fingerprint, seed)?;
    Ok((all, manifest))
}

/// Pairs in `target`, order preserved.
pub fn language_subset(pairs: &[PromptResponsePair], target: &LanguageTag) -> Vec<PromptResponsePair> {
    pairs.iter().filter(|p| &p.language == target).cloned().collect()
}

#[derive(Serialize, Deserialize)]
struct ConversationTurn {
    from: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    id: String,
    language: LanguageTag,
    conversations: Vec<ConversationTurn>,
}

pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn pair_to_line(pair: &PromptResponsePair) -> String {
    let line = DatasetLine {
        id: pair.id.clone(),
        language: pair.language.clone(),
        conversations: vec![
            ConversationTurn { from: "human".into(), value: pair.prompt.clone() },
            ConversationTurn { from: "gpt".into(), value: pair.response.clone() },
        ],
    };
    serde_json::to_string(&line).expect("dataset line serializes")
}

/// Writes the dataset and its manifest. Every pair must be complete.
pub fn write_dataset(path: &Path, pairs: &[PromptResponsePair], manifest: &DatasetManifest) -> Result<(), ReportError> {
    if let Some(bad) = pairs.iter().find(|p| !p.is_complete()) {
        return Err(ReportError::Incomplete(bad.id.clone()));
    }
    if manifest.total_pairs != pairs.len() as u64 {
        return Err(ReportError::SourceMismatch { sources: manifest.total_pairs, total: pairs.len() as u64 });
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for p in pairs {
        out.write_all(pair_to_line(p).as_bytes()).map_err(io_err(path))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    let mpath = manifest_path(path);
    std::fs::write(&mpath, manifest.to_json()).map_err(io_err(&mpath))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<PromptResponsePair>, ReportError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| ReportError::Parse { path: path.to_path_buf(), line: i + 1, message };
        let row: DatasetLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let [human, gpt] = <[ConversationTurn; 2]>::try_from(row.conversations)
            .map_err(|c| parse(format!("expected 2 turns, found {}", c.len())))?;
        if human.from != "human" || gpt.from != "gpt" {
            return Err(parse("turns must be human then gpt".into()));
        }
        pairs.push(PromptResponsePair {
            id: row.id,
            language: row.language,
            prompt: human.value,
            response: gpt.value,
            finish_state: FinishState::Complete,
        });
    }
    Ok(pairs)
}

pub fn read_manifest(dataset: &Path) -> Result<DatasetManifest, ReportError> {
    let mpath = manifest_path(dataset);
    let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Parse { path: mpath, line: e.line(), message: e.to_string() })
}
