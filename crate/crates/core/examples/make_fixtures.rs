//! Regenerates the checked-in test and demo corpora.
//!
//! Usage: make_fixtures <repo-root>
//!
//! Writes `crates/core/tests/data/funnel_2000.jsonl` and the demo inputs under
//! `demo/`. Output is a pure function of the bundled sentences and fixed seeds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use curate_core::ingest::{write_records, RuleTokenizer, Tokenizer};
use curate_core::langid::bundled_corpus;
use curate_core::report::{write_dataset, DatasetManifest, SourceBreakdown};
use curate_core::rng::{keyed_rng, uniform_below};
use curate_core::{FinishState, LanguageTag, PromptResponsePair, RawRecord, Turn};
use rand_chacha::ChaCha20Rng;

const UNKNOWN: [&str; 5] = ["unknown", "Klingon", "xx", "zp", "zzp"];
const ANON: [&str; 5] = ["NAME_1", "Name:", "username", "NAME0", "Surname"];
const KEYWORDS: [&str; 7] = ["ChatGPT", "Llama-2", "alpacas", "Claude", "Vicuna", "koala", "GPT-4"];

struct Gen {
    rng: ChaCha20Rng,
    langs: Vec<(LanguageTag, Vec<&'static str>)>,
}

impl Gen {
    fn new(key: &str) -> Self {
        let langs = bundled_corpus()
            .into_iter()
            .map(|l| {
                let mut lines = l.train;
                lines.extend(l.heldout);
                (l.language, lines)
            })
            .collect();
        Self { rng: keyed_rng(7, key), langs }
    }

    fn below(&mut self, n: usize) -> usize {
        uniform_below(&mut self.rng, n as u64) as usize
    }

    fn chance(&mut self, percent: usize) -> bool {
        self.below(100) < percent
    }

    fn sentence(&mut self, lang: usize) -> &'static str {
        let n = self.langs[lang].1.len();
        let k = self.below(n);
        self.langs[lang].1[k]
    }

    fn prompt(&mut self, lang: usize) -> String {
        let mut p = self.sentence(lang).to_string();
        if self.chance(50) {
            p.push(' ');
            p.push_str(self.sentence(lang));
        }
        p
    }
}

fn counts(tok: &RuleTokenizer, turns: &[Turn]) -> Vec<u32> {
    turns.iter().map(|t| tok.count(&t.text) as u32).collect()
}

/// 2,000 records with planted violations of every funnel stage. Records may
/// violate several stages at once.
fn funnel_fixture() -> Vec<RawRecord> {
    let mut g = Gen::new("funnel-fixture");
    let tok = RuleTokenizer;
    let mut out = Vec::with_capacity(2000);
    for i in 0..2000 {
        let lang = g.below(g.langs.len());
        let mut prompt = g.prompt(lang);
        let mut response = g.sentence(lang).to_string();
        let mut label = g.langs[lang].0.to_string();
        let flagged = g.chance(7);
        if g.chance(5) {
            label = UNKNOWN[g.below(UNKNOWN.len())].to_string();
        }
        if g.chance(6) {
            prompt = format!("{} {prompt}", ANON[g.below(ANON.len())]);
        }
        if g.chance(6) {
            prompt = format!("{prompt} {}", KEYWORDS[g.below(KEYWORDS.len())]);
        }
        if g.chance(6) {
            let other = (lang + 1 + g.below(g.langs.len() - 1)) % g.langs.len();
            label = g.langs[other].0.to_string();
        } else if g.chance(1) {
            label = "Swahili".to_string();
        }
        if g.chance(2) {
            response = format!("As GPT, {response}");
        }
        let mut turns = vec![Turn::human(prompt), Turn::assistant(response)];
        if g.chance(10) {
            turns.push(Turn::human(g.sentence(lang)));
            turns.push(Turn::assistant(g.sentence(lang)));
        }
        let mut tc = counts(&tok, &turns);
        let over = g.chance(6);
        if over {
            tc[0] = 300;
            tc[1] = 213 + g.below(300) as u32;
        } else if g.chance(2) {
            tc[0] = 300;
            tc[1] = 212;
        }
        let total_chars: usize = turns[..2].iter().map(|t| t.text.chars().count()).sum();
        let keep_counts = over || tc[0] == 300 || total_chars > 512 || !g.chance(20);
        let mut record = RawRecord::new(format!("fx-{i:04}"), LanguageTag::new(label).unwrap(), turns, flagged);
        record.source_model = ["vicuna-13b", "koala-13b", "alpaca-13b", "llama-2-13b-chat"][i % 4].to_string();
        if keep_counts {
            for (t, c) in record.turns.iter_mut().zip(tc) {
                t.token_count = Some(c);
            }
        }
        out.push(record);
    }
    out
}

/// Demo corpus: uneven language sizes, planted violations, and clusters of
/// near-duplicate prompts.
fn demo_corpus() -> Vec<RawRecord> {
    let mut g = Gen::new("demo-corpus");
    let tok = RuleTokenizer;
    let sizes: BTreeMap<&str, usize> = [
        ("English", 160),
        ("Portuguese", 70),
        ("Spanish", 60),
        ("Russian", 55),
        ("German", 50),
        ("French", 50),
        ("Chinese", 60),
        ("Japanese", 45),
        ("Italian", 35),
        ("Korean", 30),
        ("Dutch", 25),
        ("Arabic", 25),
    ]
    .into_iter()
    .collect();
    let mut plan: Vec<usize> = Vec::new();
    for (k, (tag, _)) in g.langs.iter().enumerate() {
        plan.extend(std::iter::repeat_n(k, sizes[tag.as_str()]));
    }
    for i in (1..plan.len()).rev() {
        let j = g.below(i + 1);
        plan.swap(i, j);
    }
    let mut last_prompt: BTreeMap<usize, String> = BTreeMap::new();
    let mut out = Vec::with_capacity(plan.len());
    for (i, &lang) in plan.iter().enumerate() {
        let tag = g.langs[lang].0.to_string();
        let dup_rate = if tag == "Chinese" { 70 } else { 12 };
        let mut prompt = match last_prompt.get(&lang) {
            Some(prev) if g.chance(dup_rate) => {
                let variants = ["", "!", "?", " ...", "  "];
                format!("{}{}", prev.trim_end_matches(['!', '?', '.', ' ']), variants[g.below(variants.len())])
            }
            _ => g.prompt(lang),
        };
        last_prompt.insert(lang, prompt.clone());
        let mut label = tag;
        let flagged = g.chance(4);
        if g.chance(3) {
            label = UNKNOWN[g.below(UNKNOWN.len())].to_string();
        }
        if g.chance(4) {
            prompt = format!("{} {prompt}", ANON[g.below(ANON.len())]);
        }
        if g.chance(4) {
            prompt = format!("{prompt} {}", KEYWORDS[g.below(KEYWORDS.len())]);
        }
        if g.chance(3) {
            let other = (lang + 1 + g.below(g.langs.len() - 1)) % g.langs.len();
            label = g.langs[other].0.to_string();
        }
        let turns = vec![Turn::human(prompt), Turn::assistant(g.sentence(lang))];
        let mut tc = counts(&tok, &turns);
        if g.chance(4) {
            tc[1] = 600;
        }
        let mut record = RawRecord::new(format!("demo-{i:04}"), LanguageTag::new(label).unwrap(), turns, flagged);
        record.source_model = "vicuna-13b".to_string();
        for (t, c) in record.turns.iter_mut().zip(tc) {
            t.token_count = Some(c);
        }
        out.push(record);
    }
    out
}

fn mock_script(corpus: &[RawRecord]) -> serde_json::Value {
    let mut scripts = serde_json::Map::new();
    for (i, r) in corpus.iter().enumerate() {
        let steps = match i % 29 {
            3 => serde_json::json!([{"finish_reason": "length", "text": "This answer stops half"}]),
            11 => serde_json::json!([
                {"error": "rate_limited", "message": "429"},
                {"error": "transport", "message": "connection reset"},
                {"finish_reason": "complete", "text": "Answer after retries for {id}."}
            ]),
            17 => serde_json::json!([{"error": "invalid_request", "message": "content rejected"}]),
            23 => serde_json::json!([{"finish_reason": "complete", "text": ""}]),
            _ => continue,
        };
        scripts.insert(r.id.clone(), steps);
    }
    serde_json::json!({
        "default": {"finish_reason": "complete", "text": "Reference answer for {id}. The question was: {prompt}"},
        "delay_ms": 0,
        "scripts": scripts,
    })
}

fn aux_dataset(key: &str, prefix: &str, n: usize) -> Vec<PromptResponsePair> {
    let mut g = Gen::new(key);
    (0..n)
        .map(|i| {
            let lang = if i % 3 == 0 {
                g.langs.iter().position(|(t, _)| t.as_str() == "Japanese").unwrap()
            } else {
                g.below(g.langs.len())
            };
            PromptResponsePair {
                id: format!("{prefix}-{i:04}"),
                language: g.langs[lang].0.clone(),
                prompt: g.prompt(lang),
                response: g.sentence(lang).to_string(),
                finish_state: FinishState::Complete,
            }
        })
        .collect()
}

fn write_jsonl(path: &Path, records: &[RawRecord]) {
    let file = BufWriter::new(File::create(path).expect("create output"));
    write_records(file, records).expect("write records");
    println!("wrote {} ({} records)", path.display(), records.len());
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let data = root.join("crates/core/tests/data");
    let demo = root.join("demo");
    std::fs::create_dir_all(&data).expect("data dir");
    std::fs::create_dir_all(&demo).expect("demo dir");

    write_jsonl(&data.join("funnel_2000.jsonl"), &funnel_fixture());

    let corpus = demo_corpus();
    write_jsonl(&demo.join("corpus.jsonl"), &corpus);
    let script = serde_json::to_string_pretty(&mock_script(&corpus)).unwrap() + "\n";
    std::fs::write(demo.join("mock_responses.json"), script).expect("write mock script");

    for (key, prefix, n) in [("aux-translated", "translated", 40), ("aux-reasoning", "reasoning", 60)] {
        let pairs = aux_dataset(key, prefix, n);
        let manifest = DatasetManifest::build(&pairs, SourceBreakdown::Single(prefix.into()), "", 7).unwrap();
        let path = demo.join(format!("{prefix}.jsonl"));
        write_dataset(&path, &pairs, &manifest).expect("write aux dataset");
        println!("wrote {} ({n} pairs)", path.display());
    }
}
