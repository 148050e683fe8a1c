use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use curate_core::dedup::{dedup_corpus, embed_batch, DedupOptions, HashedNgramEmbedder, VectorCache};
use curate_core::filters::{default_stages, run_funnel};
use curate_core::ingest::{read_corpus, write_records, IngestError, RuleTokenizer};
use curate_core::langid::{LanguageDetector, NgramDetector};
use curate_core::report::{
    blend_datasets, distribution_svg, language_distribution, language_subset, read_dataset, write_dataset,
    DatasetManifest, ReportError, SourceBreakdown,
};
use curate_core::sampler::{sample_per_language, sampling_stage, SamplePlan};
use curate_core::synth::{
    filter_incomplete, generate_responses, CompletionProvider, HttpProvider, MockProvider, PromptItem, RetryPolicy,
    SynthError, SynthOptions, SynthStats,
};
use curate_core::{EmbeddingVector, FinishState, FunnelReport, LanguageTag, PromptResponsePair, RawRecord, StageCounts};

use crate::config::{CliConfig, ProviderKind};
use crate::{Failure, GlobalArgs};

pub const CLEAN: &str = "clean.jsonl";
pub const SAMPLED: &str = "sampled.jsonl";
pub const DEDUPED: &str = "deduped.jsonl";
pub const VECTORS: &str = "vectors.bin";
pub const CHECKPOINT: &str = "synth.checkpoint.jsonl";
pub const GENERATIONS: &str = "generations.jsonl";
pub const DATASET: &str = "dataset.jsonl";
pub const BLENDED: &str = "blended.jsonl";
pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const TIMINGS: &str = "timings.json";

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

fn report_failure(e: ReportError) -> Failure {
    match e {
        ReportError::DuplicateId { .. } | ReportError::DuplicateSource(_) => Failure::Config(e.to_string()),
        _ => Failure::Io(e.to_string()),
    }
}

fn progress(stage: &str, message: impl std::fmt::Display) {
    eprintln!("curate {stage}: {message}");
}

/// Outputs of `run` other than the big data files. Byte-identical for
/// identical inputs, seed and configuration.
#[derive(Debug, Serialize)]
struct RunManifest {
    tool_version: &'static str,
    config_fingerprint: String,
    seed: u64,
    outputs: BTreeMap<&'static str, String>,
    funnel: FunnelReport,
    synth: SynthSummary,
}

#[derive(Debug, Serialize)]
struct SynthSummary {
    prompts: usize,
    complete: usize,
    truncated: usize,
    unanswered: usize,
    errors: usize,
}

impl From<&SynthStats> for SynthSummary {
    fn from(s: &SynthStats) -> Self {
        Self {
            prompts: s.requested + s.resumed,
            complete: s.complete,
            truncated: s.truncated,
            unanswered: s.unanswered,
            errors: s.errors,
        }
    }
}

#[derive(Debug, Serialize)]
struct DedupSummary {
    threshold: f64,
    languages: BTreeMap<String, LanguageDedup>,
}

#[derive(Debug, Serialize)]
struct LanguageDedup {
    input: usize,
    kept: usize,
    removal_rate: f64,
    removed: Vec<RemovedPrompt>,
}

#[derive(Debug, Serialize)]
struct RemovedPrompt {
    id: String,
    duplicate_of: String,
    similarity: f64,
}

#[derive(Debug, Serialize)]
struct Generation<'a> {
    id: &'a str,
    language: &'a LanguageTag,
    finish_state: FinishState,
    attempts: u32,
    prompt: &'a str,
    response: &'a str,
}

#[derive(Debug, Serialize)]
struct LanguageCount {
    language: String,
    count: usize,
}

pub struct Context {
    cfg: CliConfig,
    input: Option<PathBuf>,
    out: PathBuf,
    workers: usize,
    fingerprint: String,
}

impl Context {
    pub fn new(cfg: CliConfig, args: &GlobalArgs) -> Result<Self, Failure> {
        std::fs::create_dir_all(&args.output).map_err(|e| io_failure(&args.output, e))?;
        let fingerprint = cfg.pipeline.fingerprint();
        Ok(Self { cfg, input: args.input.clone(), out: args.output.clone(), workers: args.workers, fingerprint })
    }

    pub fn input_or(&self, command: &str) -> Result<PathBuf, Failure> {
        self.input.clone().ok_or_else(|| Failure::Config(format!("{command}: --input is required")))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self) -> u64 {
        self.cfg.pipeline.seed
    }

    fn detector(&self) -> Result<Arc<dyn LanguageDetector>, Failure> {
        match &self.cfg.langid.profiles {
            None => Ok(Arc::new(NgramDetector::bundled())),
            Some(p) => {
                let path = self.cfg.resolve(p);
                let file = File::open(&path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                let detector = NgramDetector::load(BufReader::new(file))
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                Ok(Arc::new(detector))
            }
        }
    }

    fn read_records(&self, path: &Path) -> Result<Vec<RawRecord>, Failure> {
        let reader = read_corpus(path, self.cfg.ingest.options()).map_err(|e| io_failure(path, e))?;
        reader.collect::<Result<Vec<_>, IngestError>>().map_err(|e| io_failure(path, e))
    }

    fn write_records(&self, name: &str, records: &[RawRecord]) -> Result<(), Failure> {
        let path = self.out(name);
        let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
        write_records(BufWriter::new(file), records).map_err(|e| io_failure(&path, e))
    }

    fn write_funnel(&self, stem: &str, report: &FunnelReport) -> Result<(), Failure> {
        write_text(&self.out(&format!("{stem}.txt")), &report.to_table())?;
        write_text(&self.out(&format!("{stem}.jsonl")), &report.to_jsonl())
    }

    /// Streams the corpus through the cleaning funnel.
    pub fn clean(&self, input: &Path) -> Result<FunnelReport, Failure> {
        let stages = default_stages(&self.cfg.pipeline, self.detector()?, Arc::new(RuleTokenizer))
            .map_err(|e| Failure::Config(e.to_string()))?;
        let mut reader = read_corpus(input, self.cfg.ingest.options()).map_err(|e| io_failure(input, e))?;
        let mut failure = None;
        let records = std::iter::from_fn(|| match reader.next()? {
            Ok(r) => Some(r),
            Err(e) => {
                failure = Some(e);
                None
            }
        });
        let (kept, report) =
            run_funnel(records, &stages, self.workers).map_err(|e| Failure::Config(e.to_string()))?;
        if let Some(e) = failure {
            return Err(io_failure(input, e));
        }
        let stats = reader.into_stats();
        progress(
            "clean",
            format!("{} lines, {} records, {} kept", stats.lines_read, stats.records_accepted, kept.len()),
        );
        self.write_records(CLEAN, &kept)?;
        write_json(&self.out("ingest.json"), &stats)?;
        self.write_funnel("funnel", &report)?;
        Ok(report)
    }

    pub fn sample(&self, input: &Path) -> Result<StageCounts, Failure> {
        let records = self.read_records(input)?;
        let n = records.len();
        let plan = SamplePlan::new(self.cfg.pipeline.sample_cap, self.seed()).map_err(|e| Failure::Config(e.to_string()))?;
        let sampled = sample_per_language(records, plan);
        progress("sample", format!("{n} -> {}", sampled.len()));
        self.write_records(SAMPLED, &sampled)?;
        Ok(sampling_stage(n, sampled.len()))
    }

    fn vectors_for(&self, records: &[RawRecord]) -> Result<Vec<EmbeddingVector>, Failure> {
        let dim = self.cfg.embedding.dim;
        let cached = match &self.cfg.embedding.cache {
            Some(p) if self.cfg.resolve(p).exists() => {
                let path = self.cfg.resolve(p);
                let file = File::open(&path).map_err(|e| io_failure(&path, e))?;
                let cache = VectorCache::read(BufReader::new(file)).map_err(|e| io_failure(&path, e))?;
                if cache.dim() != dim {
                    return Err(Failure::Config(format!(
                        "{}: cache dimension {} does not match [embedding] dim {dim}",
                        path.display(),
                        cache.dim()
                    )));
                }
                cache
            }
            _ => VectorCache::new(dim),
        };
        let known = cached.to_map();
        let missing: Vec<usize> = (0..records.len()).filter(|&i| !known.contains_key(records[i].id.as_str())).collect();
        let prompts: Vec<&str> = missing.iter().map(|&i| records[i].prompt_text()).collect();
        let embedder = HashedNgramEmbedder { dim, n: 3 };
        let fresh = embed_batch(&prompts, &embedder).map_err(|e| match e {
            curate_core::dedup::DedupError::ProviderFailure { index, reason } => {
                Failure::Io(format!("embedding record {}: {reason}", records[missing[index]].id))
            }
            other => Failure::Io(other.to_string()),
        })?;
        let mut fresh = fresh.into_iter();
        let mut slots = missing.iter().peekable();
        let vectors = (0..records.len())
            .map(|i| {
                if slots.peek() == Some(&&i) {
                    slots.next();
                    fresh.next().expect("one vector per missing record")
                } else {
                    known[records[i].id.as_str()].clone()
                }
            })
            .collect();
        if !missing.is_empty() && !cached.is_empty() {
            progress("dedup", format!("{} cached vectors, {} embedded", records.len() - missing.len(), missing.len()));
        }
        Ok(vectors)
    }

    pub fn dedup(&self, input: &Path) -> Result<StageCounts, Failure> {
        let records = self.read_records(input)?;
        let vectors = self.vectors_for(&records)?;

        let mut cache = VectorCache::new(self.cfg.embedding.dim);
        for (r, v) in records.iter().zip(&vectors) {
            cache.insert(r.id.clone(), v.clone()).map_err(|e| Failure::Io(e.to_string()))?;
        }
        let vpath = self.out(VECTORS);
        let file = File::create(&vpath).map_err(|e| io_failure(&vpath, e))?;
        cache.write(BufWriter::new(file)).map_err(|e| io_failure(&vpath, e))?;

        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let threshold = self.cfg.pipeline.dedup_threshold;
        let options = DedupOptions { workers: self.workers, ..DedupOptions::default() };
        let result = dedup_corpus(records, &vectors, |r| &r.language, threshold, options)
            .map_err(|e| Failure::Io(e.to_string()))?;
        let languages = result
            .per_language
            .iter()
            .map(|(lang, r)| {
                let removed = r
                    .removed
                    .iter()
                    .map(|m| RemovedPrompt {
                        id: ids[m.index].clone(),
                        duplicate_of: ids[m.culprit].clone(),
                        similarity: m.similarity,
                    })
                    .collect();
                let entry = LanguageDedup { input: r.len(), kept: r.survivors.len(), removal_rate: r.removal_rate(), removed };
                (lang.to_string(), entry)
            })
            .collect();
        write_json(&self.out("dedup.json"), &DedupSummary { threshold, languages })?;
        let stage = result.stage();
        progress("dedup", format!("{} -> {}", stage.input, stage.kept));
        self.write_records(DEDUPED, &result.kept)?;
        Ok(stage)
    }

    fn provider(&self) -> Result<Box<dyn CompletionProvider>, Failure> {
        let s = &self.cfg.synth;
        match s.provider {
            ProviderKind::Mock => match &s.mock_responses {
                None => Ok(Box::new(MockProvider::default())),
                Some(p) => {
                    let path = self.cfg.resolve(p);
                    let text = std::fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
                    let mock = MockProvider::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    Ok(Box::new(mock))
                }
            },
            ProviderKind::Http => {
                let endpoint = s.endpoint.as_deref().ok_or_else(|| Failure::Config("[synth]: endpoint is required".into()))?;
                let model = s.model.as_deref().ok_or_else(|| Failure::Config("[synth]: model is required".into()))?;
                let provider = HttpProvider::from_env(endpoint, model, &s.api_key_env, Duration::from_secs(s.timeout_secs))
                    .map_err(|e| Failure::Provider(e.to_string()))?;
                Ok(Box::new(provider))
            }
        }
    }

    pub fn synth(&self, input: &Path) -> Result<(StageCounts, SynthStats), Failure> {
        let records = self.read_records(input)?;
        let provider = self.provider()?;
        let prompts: Vec<PromptItem> = records
            .iter()
            .map(|r| PromptItem { id: r.id.clone(), language: r.language.clone(), text: r.prompt_text().to_string() })
            .collect();
        let s = &self.cfg.synth;
        let options = SynthOptions {
            policy: RetryPolicy {
                max_attempts: s.max_attempts,
                backoff_base: Duration::from_millis(s.backoff_ms),
                backoff_factor: s.backoff_factor,
            },
            max_in_flight: s.max_in_flight,
            temperature: self.cfg.pipeline.temperature,
            max_tokens: self.cfg.pipeline.max_response_tokens,
            checkpoint: Some(self.out(CHECKPOINT)),
            cancel: None,
        };
        let outcome = generate_responses(&prompts, provider.as_ref(), &options).map_err(|e| match e {
            SynthError::InvalidOptions(_) | SynthError::DuplicateId(_) => Failure::Config(e.to_string()),
            SynthError::Interrupted { .. } => Failure::Provider(e.to_string()),
            other => Failure::Io(other.to_string()),
        })?;

        let gpath = self.out(GENERATIONS);
        let file = File::create(&gpath).map_err(|e| io_failure(&gpath, e))?;
        let mut w = BufWriter::new(file);
        for (p, attempts) in outcome.pairs.iter().zip(&outcome.attempts) {
            let g = Generation {
                id: &p.id,
                language: &p.language,
                finish_state: p.finish_state,
                attempts: *attempts,
                prompt: &p.prompt,
                response: &p.response,
            };
            let line = serde_json::to_string(&g).expect("generation serializes");
            writeln!(w, "{line}").map_err(|e| io_failure(&gpath, e))?;
        }
        w.flush().map_err(|e| io_failure(&gpath, e))?;

        let stats = outcome.stats.clone();
        let (kept, stage) = filter_incomplete(outcome.pairs);
        let manifest = DatasetManifest::build(&kept, SourceBreakdown::Single(self.cfg.blend.name.clone()), &self.fingerprint, self.seed())
            .map_err(report_failure)?;
        write_dataset(&self.out(DATASET), &kept, &manifest).map_err(report_failure)?;
        progress(
            "synth",
            format!(
                "{} prompts ({} resumed): {} complete, {} truncated, {} unanswered",
                prompts.len(),
                stats.resumed,
                stats.complete,
                stats.truncated,
                stats.unanswered
            ),
        );
        if !prompts.is_empty() && stats.errors == prompts.len() {
            return Err(Failure::Provider(format!("all {} requests failed; see {}", prompts.len(), gpath.display())));
        }
        Ok((stage, stats))
    }

    pub fn blend(&self, input: &Path) -> Result<DatasetManifest, Failure> {
        let mut datasets = vec![(self.cfg.blend.name.clone(), read_dataset(input).map_err(report_failure)?)];
        for source in &self.cfg.blend.sources {
            let path = self.cfg.resolve(&source.path);
            datasets.push((source.name.clone(), read_dataset(&path).map_err(report_failure)?));
        }
        let (pairs, manifest) = blend_datasets(datasets, self.seed(), &self.fingerprint).map_err(report_failure)?;
        write_dataset(&self.out(BLENDED), &pairs, &manifest).map_err(report_failure)?;
        progress("blend", format!("{} pairs from {} sources", manifest.total_pairs, manifest.source_breakdown.len()));
        Ok(manifest)
    }

    fn subset_language(&self, language: Option<&str>) -> Result<Option<LanguageTag>, Failure> {
        language
            .or(self.cfg.report.subset.as_deref())
            .map(|l| LanguageTag::new(l).map_err(|e| Failure::Config(e.to_string())))
            .transpose()
    }

    pub fn subset(&self, input: &Path, language: Option<&str>) -> Result<String, Failure> {
        let target = self
            .subset_language(language)?
            .ok_or_else(|| Failure::Config("subset: pass --language or set [report] subset".into()))?;
        self.write_subset(input, &target)
    }

    fn write_subset(&self, input: &Path, target: &LanguageTag) -> Result<String, Failure> {
        let pairs = read_dataset(input).map_err(report_failure)?;
        let subset = language_subset(&pairs, target);
        let source = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let manifest = DatasetManifest::build(&subset, SourceBreakdown::Single(source), &self.fingerprint, self.seed())
            .map_err(report_failure)?;
        let name = format!("subset_{}.jsonl", target.as_str().to_lowercase().replace(|c: char| !c.is_alphanumeric(), "_"));
        write_dataset(&self.out(&name), &subset, &manifest).map_err(report_failure)?;
        progress("subset", format!("{} {} pairs", subset.len(), target));
        Ok(name)
    }

    pub fn report(&self, input: &Path) -> Result<(), Failure> {
        let pairs = read_dataset(input).map_err(report_failure)?;
        self.write_report(&pairs)
    }

    fn write_report(&self, pairs: &[PromptResponsePair]) -> Result<(), Failure> {
        let dist = language_distribution(pairs);
        let rows: Vec<LanguageCount> =
            dist.iter().map(|(l, n)| LanguageCount { language: l.to_string(), count: *n }).collect();
        write_json(&self.out("distribution.json"), &rows)?;
        write_text(&self.out("distribution.svg"), &distribution_svg(&dist, self.cfg.report.top_k))?;
        let total = pairs.len().max(1) as f64;
        let mut table = format!("{:<16} {:>8} {:>7}\n", "language", "pairs", "share");
        for (l, n) in &dist {
            table.push_str(&format!("{:<16} {:>8} {:>6.2}%\n", l.as_str(), n, 100.0 * *n as f64 / total));
        }
        table.push_str(&format!("{:<16} {:>8}\n", "total", pairs.len()));
        write_text(&self.out("distribution.txt"), &table)?;
        progress("report", format!("{} languages", dist.len()));
        Ok(())
    }

    /// Every stage in order. Intermediate files are the interchange between
    /// stages, so a run leaves the same files as the individual commands.
    pub fn run(&self, input: &Path) -> Result<(), Failure> {
        let mut timings: BTreeMap<&str, f64> = BTreeMap::new();
        let mut timed = |name: &'static str, start: Instant| {
            timings.insert(name, start.elapsed().as_secs_f64());
        };

        let t = Instant::now();
        let mut funnel = self.clean(input)?;
        timed("clean", t);
        let t = Instant::now();
        funnel.push(self.sample(&self.out(CLEAN))?);
        timed("sample", t);
        let t = Instant::now();
        funnel.push(self.dedup(&self.out(SAMPLED))?);
        timed("dedup", t);
        let t = Instant::now();
        let (stage, stats) = self.synth(&self.out(DEDUPED))?;
        funnel.push(stage);
        timed("synth", t);
        let t = Instant::now();
        self.blend(&self.out(DATASET))?;
        timed("blend", t);
        let t = Instant::now();
        let subset = match self.subset_language(None)? {
            Some(lang) => Some(self.write_subset(&self.out(BLENDED), &lang)?),
            None => None,
        };
        self.report(&self.out(BLENDED))?;
        timed("report", t);

        funnel.check().map_err(|e| Failure::Io(format!("inconsistent funnel: {e}")))?;
        self.write_funnel("run_funnel", &funnel)?;

        let mut outputs: BTreeMap<&'static str, String> = [
            ("clean", CLEAN),
            ("sampled", SAMPLED),
            ("deduped", DEDUPED),
            ("vectors", VECTORS),
            ("dedup_report", "dedup.json"),
            ("generations", GENERATIONS),
            ("checkpoint", CHECKPOINT),
            ("dataset", DATASET),
            ("blended", BLENDED),
            ("funnel_table", "run_funnel.txt"),
            ("funnel", "run_funnel.jsonl"),
            ("distribution", "distribution.json"),
            ("distribution_plot", "distribution.svg"),
            ("distribution_table", "distribution.txt"),
        ]
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect();
        if let Some(name) = subset {
            outputs.insert("subset", name);
        }
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            config_fingerprint: self.fingerprint.clone(),
            seed: self.seed(),
            outputs,
            funnel,
            synth: SynthSummary::from(&stats),
        };
        write_json(&self.out(RUN_MANIFEST), &manifest)?;
        write_json(&self.out(TIMINGS), &timings)?;
        progress("run", format!("done; manifest at {}", self.out(RUN_MANIFEST).display()));
        Ok(())
    }
}
