use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use curate_core::ingest::{IngestOptions, Strictness, Utf8Policy};
use curate_core::synth::DEFAULT_API_KEY_ENV;
use curate_core::PipelineConfig;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StrictnessSetting {
    #[default]
    SkipBad,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Utf8Setting {
    #[default]
    Reject,
    Repair,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub strictness: StrictnessSetting,
    pub utf8: Utf8Setting,
    pub unique_ids: Option<bool>,
}

impl IngestSection {
    pub fn options(&self) -> IngestOptions {
        let defaults = IngestOptions::default();
        IngestOptions {
            strictness: match self.strictness {
                StrictnessSetting::SkipBad => Strictness::SkipBad,
                StrictnessSetting::Abort => Strictness::Abort,
            },
            utf8: match self.utf8 {
                Utf8Setting::Reject => Utf8Policy::Reject,
                Utf8Setting::Repair => Utf8Policy::Repair,
            },
            unique_ids: self.unique_ids.unwrap_or(defaults.unique_ids),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangidSection {
    /// Saved profile file; the bundled detector is used when absent.
    pub profiles: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub dim: usize,
    /// Existing vector cache to reuse for matching record ids.
    pub cache: Option<PathBuf>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self { dim: curate_core::dedup::DEFAULT_EMBED_DIM, cache: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub provider: ProviderKind,
    pub mock_responses: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the key. The key itself is
    /// never read from this file.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub backoff_factor: f64,
    pub timeout_secs: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            mock_responses: None,
            endpoint: None,
            model: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_in_flight: 4,
            max_attempts: 3,
            backoff_ms: 500,
            backoff_factor: 2.0,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendSource {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlendSection {
    /// Source name given to the pipeline's own dataset.
    pub name: String,
    pub sources: Vec<BlendSource>,
}

impl Default for BlendSection {
    fn default() -> Self {
        Self { name: "curated".to_string(), sources: Vec::new() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub top_k: usize,
    pub subset: Option<String>,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { top_k: 20, subset: None }
    }
}

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub pipeline: PipelineConfig,
    pub ingest: IngestSection,
    pub langid: LangidSection,
    pub embedding: EmbeddingSection,
    pub synth: SynthSection,
    pub blend: BlendSection,
    pub report: ReportSection,
    /// Relative paths in the file resolve against this directory.
    pub base_dir: PathBuf,
}

fn section<T: DeserializeOwned + Default>(table: &mut toml::Table, key: &str) -> Result<T, Failure> {
    match table.remove(key) {
        None => Ok(T::default()),
        Some(value) => value.try_into().map_err(|e: toml::de::Error| Failure::Config(format!("[{key}]: {}", e.message()))),
    }
}

impl CliConfig {
    /// Loads `path` (or an empty config) and applies a seed override.
    pub fn load(path: Option<&Path>, seed_override: Option<u64>) -> Result<Self, Failure> {
        let (mut table, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", p.display())))?;
                let table: toml::Table =
                    text.parse().map_err(|e: toml::de::Error| Failure::Config(format!("{}: {e}", p.display())))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (table, dir)
            }
            None => (toml::Table::new(), PathBuf::from(".")),
        };
        let ingest = section(&mut table, "ingest")?;
        let langid = section(&mut table, "langid")?;
        let embedding: EmbeddingSection = section(&mut table, "embedding")?;
        let synth: SynthSection = section(&mut table, "synth")?;
        let blend = section(&mut table, "blend")?;
        let report = section(&mut table, "report")?;
        if let Some(seed) = seed_override {
            let seed = i64::try_from(seed).map_err(|_| Failure::Config("--seed must fit in 63 bits".into()))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        let pipeline: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::Config(e.message().to_string()))?;
        pipeline.validate().map_err(|e| Failure::Config(e.to_string()))?;
        if embedding.dim == 0 {
            return Err(Failure::Config("[embedding]: dim must be positive".into()));
        }
        if synth.max_in_flight == 0 {
            return Err(Failure::Config("[synth]: max_in_flight must be positive".into()));
        }
        Ok(Self { pipeline, ingest, langid, embedding, synth, blend, report, base_dir })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}
