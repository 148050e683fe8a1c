//! Character n-gram language identification.
//!
//! Each language gets a profile of additively smoothed n-gram probabilities for
//! every order `1..=n_max`. A text is scored against a profile by the mean
//! log-probability of all its n-grams, and the scores of all profiles are
//! turned into confidences with a softmax scaled by `sharpness`:
//!
//! ```text
//! P(g | L)   = (count_L(g) + a) / (total_L,n + a * (V_L,n + 1))
//! score(L)   = mean over n-grams g of text: ln P(g | L)
//! conf(L)    = exp(k * score(L)) / sum_M exp(k * score(M))
//! ```
//!
//! where `a` is the smoothing mass, `V_L,n` the number of distinct n-grams of
//! order `n` seen for `L`, and the extra `+ 1` slot is shared by every unseen
//! n-gram. The detector is exposed through [`LanguageDetector`] so another
//! implementation can sit behind the confidence filter unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{fold_case, LanguageTag};

pub const DEFAULT_N_MAX: usize = 3;
pub const DEFAULT_SMOOTHING: f64 = 0.5;
/// Softmax scale applied to the mean log-likelihoods.
pub const DEFAULT_SHARPNESS: f64 = 20.0;

const PROFILE_MAGIC: &str = "#curate-langid-profiles v1";

#[derive(Debug, Error)]
pub enum LangIdError {
    #[error("text is empty after normalisation")]
    EmptyText,
    #[error("no language profiles loaded")]
    NoProfiles,
    #[error("no profile for language {0}")]
    UnknownTarget(LanguageTag),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training option: {0}")]
    InvalidOptions(String),
    #[error("profile file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Best language for a text, with its confidence and the runner-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub language: LanguageTag,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runner_up: Option<(LanguageTag, f64)>,
}

/// Anything that can assign language probabilities to a text.
pub trait LanguageDetector: Send + Sync {
    /// Probability per supported language, sorted by tag, summing to one.
    fn distribution(&self, text: &str) -> Result<Vec<(LanguageTag, f64)>, LangIdError>;

    fn supports(&self, language: &LanguageTag) -> bool;

    fn detect(&self, text: &str) -> Result<Detection, LangIdError> {
        let dist = self.distribution(text)?;
        detection_from(&dist).ok_or(LangIdError::NoProfiles)
    }

    /// Probability mass assigned to `target`, which need not be the argmax.
    fn confidence_for(&self, text: &str, target: &LanguageTag) -> Result<f64, LangIdError> {
        self.assess(text, target).map(|(mass, _)| mass)
    }

    /// Mass on `target` together with the full detection, from one scoring pass.
    fn assess(&self, text: &str, target: &LanguageTag) -> Result<(f64, Detection), LangIdError> {
        if !self.supports(target) {
            return Err(LangIdError::UnknownTarget(target.clone()));
        }
        let dist = self.distribution(text)?;
        let mass = dist.iter().find(|(tag, _)| tag == target).map_or(0.0, |(_, p)| *p);
        let detection = detection_from(&dist).ok_or(LangIdError::NoProfiles)?;
        Ok((mass, detection))
    }
}

/// Argmax with ties going to the lexicographically smaller tag.
fn detection_from(dist: &[(LanguageTag, f64)]) -> Option<Detection> {
    let mut ranked: Vec<&(LanguageTag, f64)> = dist.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let (language, confidence) = ranked.first().map(|(t, p)| (t.clone(), *p))?;
    let runner_up = ranked.get(1).map(|(t, p)| (t.clone(), *p));
    Some(Detection { language, confidence, runner_up })
}

/// Lowercases, collapses whitespace runs to one space, and trims.
pub fn normalize_text(text: &str) -> Vec<char> {
    let folded = fold_case(text);
    let mut out = Vec::with_capacity(folded.len());
    let mut pending_space = false;
    for c in folded.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

fn ngrams(chars: &[char], n: usize) -> impl Iterator<Item = String> + '_ {
    chars.windows(n).map(|w| w.iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTable {
    pub n: usize,
    /// Number of n-grams of this order seen in training.
    pub total: u64,
    pub unseen_log_prob: f64,
    pub log_probs: BTreeMap<String, f64>,
}

impl OrderTable {
    fn from_counts(n: usize, counts: &BTreeMap<String, u64>, smoothing: f64) -> Self {
        let total: u64 = counts.values().sum();
        let denom = total as f64 + smoothing * (counts.len() as f64 + 1.0);
        let log_probs = counts
            .iter()
            .map(|(g, &c)| (g.clone(), ((c as f64 + smoothing) / denom).ln()))
            .collect();
        Self { n, total, unseen_log_prob: (smoothing / denom).ln(), log_probs }
    }

    fn log_prob(&self, gram: &str) -> f64 {
        self.log_probs.get(gram).copied().unwrap_or(self.unseen_log_prob)
    }

    /// Probability mass of the table including the shared unseen slot.
    pub fn total_mass(&self) -> f64 {
        self.log_probs.values().map(|lp| lp.exp()).sum::<f64>() + self.unseen_log_prob.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub language: LanguageTag,
    pub smoothing: f64,
    /// One table per order, `orders[i].n == i + 1`.
    pub orders: Vec<OrderTable>,
}

impl LanguageProfile {
    pub fn n_max(&self) -> usize {
        self.orders.len()
    }

    /// Mean n-gram log-likelihood of normalised text, or `None` if it has no n-grams.
    pub fn score(&self, chars: &[char]) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for table in &self.orders {
            for g in ngrams(chars, table.n) {
                sum += table.log_prob(&g);
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub n_max: usize,
    pub smoothing: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { n_max: DEFAULT_N_MAX, smoothing: DEFAULT_SMOOTHING }
    }
}

/// Builds one profile per language.
///
/// Texts are normalised and collected as a set per language, so the result
/// does not depend on input order or on repeated texts.
pub fn train_profiles<I, S>(
    labeled_texts: I,
    options: TrainOptions,
) -> Result<Vec<LanguageProfile>, LangIdError>
where
    I: IntoIterator<Item = (LanguageTag, S)>,
    S: AsRef<str>,
{
    if options.n_max == 0 {
        return Err(LangIdError::InvalidOptions("n_max must be at least 1".into()));
    }
    if !(options.smoothing > 0.0 && options.smoothing.is_finite()) {
        return Err(LangIdError::InvalidOptions("smoothing must be positive".into()));
    }
    let mut texts: BTreeMap<LanguageTag, BTreeSet<Vec<char>>> = BTreeMap::new();
    for (tag, text) in labeled_texts {
        texts.entry(tag).or_default().insert(normalize_text(text.as_ref()));
    }
    if texts.is_empty() {
        return Err(LangIdError::EmptyTrainingSet);
    }
    Ok(texts
        .into_iter()
        .map(|(language, set)| {
            let orders = (1..=options.n_max)
                .map(|n| {
                    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
                    for chars in &set {
                        for g in ngrams(chars, n) {
                            *counts.entry(g).or_default() += 1;
                        }
                    }
                    OrderTable::from_counts(n, &counts, options.smoothing)
                })
                .collect();
            LanguageProfile { language, smoothing: options.smoothing, orders }
        })
        .collect())
}

/// Softmax distribution over `profiles`, sorted by language tag.
pub fn language_distribution(
    text: &str,
    profiles: &[LanguageProfile],
    sharpness: f64,
) -> Result<Vec<(LanguageTag, f64)>, LangIdError> {
    if profiles.is_empty() {
        return Err(LangIdError::NoProfiles);
    }
    let chars = normalize_text(text);
    if chars.is_empty() {
        return Err(LangIdError::EmptyText);
    }
    let mut scored: Vec<(&LanguageTag, f64)> = profiles
        .iter()
        .map(|p| p.score(&chars).map(|s| (&p.language, sharpness * s)).ok_or(LangIdError::EmptyText))
        .collect::<Result<_, _>>()?;
    scored.sort_by(|a, b| a.0.cmp(b.0));
    let max = scored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scored.iter().map(|(_, s)| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(scored.into_iter().zip(weights).map(|((tag, _), w)| (tag.clone(), w / total)).collect())
}

/// Top language for `text` under the default sharpness.
pub fn detect(text: &str, profiles: &[LanguageProfile]) -> Result<Detection, LangIdError> {
    let dist = language_distribution(text, profiles, DEFAULT_SHARPNESS)?;
    detection_from(&dist).ok_or(LangIdError::NoProfiles)
}

/// Softmax mass on `target` under the default sharpness.
pub fn confidence_for(
    text: &str,
    target: &LanguageTag,
    profiles: &[LanguageProfile],
) -> Result<f64, LangIdError> {
    if !profiles.iter().any(|p| &p.language == target) {
        return Err(LangIdError::UnknownTarget(target.clone()));
    }
    let dist = language_distribution(text, profiles, DEFAULT_SHARPNESS)?;
    Ok(dist.into_iter().find(|(t, _)| t == target).map_or(0.0, |(_, p)| p))
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    n_max: usize,
    sharpness: f64,
    profiles: Vec<LanguageProfile>,
}

/// The built-in detector: a fixed set of profiles plus a softmax scale.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramDetector {
    profiles: Vec<LanguageProfile>,
    sharpness: f64,
}

impl NgramDetector {
    pub fn new(mut profiles: Vec<LanguageProfile>, sharpness: f64) -> Result<Self, LangIdError> {
        if profiles.is_empty() {
            return Err(LangIdError::NoProfiles);
        }
        if !(sharpness > 0.0 && sharpness.is_finite()) {
            return Err(LangIdError::InvalidOptions("sharpness must be positive".into()));
        }
        let n_max = profiles[0].n_max();
        if profiles.iter().any(|p| p.n_max() != n_max) {
            return Err(LangIdError::InvalidOptions("profiles disagree on n-gram order".into()));
        }
        profiles.sort_by(|a, b| a.language.cmp(&b.language));
        if profiles.windows(2).any(|w| w[0].language == w[1].language) {
            return Err(LangIdError::InvalidOptions("duplicate language profile".into()));
        }
        Ok(Self { profiles, sharpness })
    }

    /// Detector trained on the training split of the bundled corpus.
    pub fn bundled() -> Self {
        let texts = bundled_corpus()
            .into_iter()
            .flat_map(|lang| lang.train.into_iter().map(move |t| (lang.language.clone(), t)));
        let profiles = train_profiles(texts, TrainOptions::default()).expect("bundled corpus trains");
        Self::new(profiles, DEFAULT_SHARPNESS).expect("bundled profiles are consistent")
    }

    pub fn profiles(&self) -> &[LanguageProfile] {
        &self.profiles
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageTag> {
        self.profiles.iter().map(|p| &p.language)
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<(), LangIdError> {
        let file = ProfileFile {
            n_max: self.profiles[0].n_max(),
            sharpness: self.sharpness,
            profiles: self.profiles.clone(),
        };
        writeln!(out, "{PROFILE_MAGIC}")?;
        serde_json::to_writer(&mut out, &file).map_err(|e| LangIdError::Format(e.to_string()))?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(mut input: R) -> Result<Self, LangIdError> {
        let mut magic = String::new();
        input.read_line(&mut magic)?;
        if magic.trim_end() != PROFILE_MAGIC {
            return Err(LangIdError::Format(format!("bad header {:?}", magic.trim_end())));
        }
        let file: ProfileFile =
            serde_json::from_reader(input).map_err(|e| LangIdError::Format(e.to_string()))?;
        if file.profiles.iter().any(|p| p.n_max() != file.n_max) {
            return Err(LangIdError::Format("n_max does not match the tables".into()));
        }
        for p in &file.profiles {
            if p.orders.iter().enumerate().any(|(i, t)| t.n != i + 1) {
                return Err(LangIdError::Format(format!("{}: orders out of sequence", p.language)));
            }
        }
        Self::new(file.profiles, file.sharpness)
    }
}

impl LanguageDetector for NgramDetector {
    fn distribution(&self, text: &str) -> Result<Vec<(LanguageTag, f64)>, LangIdError> {
        language_distribution(text, &self.profiles, self.sharpness)
    }

    fn supports(&self, language: &LanguageTag) -> bool {
        self.profiles.binary_search_by(|p| p.language.cmp(language)).is_ok()
    }
}

/// One language of the bundled toy corpus.
#[derive(Debug, Clone)]
pub struct BundledLanguage {
    pub language: LanguageTag,
    pub train: Vec<&'static str>,
    pub heldout: Vec<&'static str>,
}

macro_rules! bundled_texts {
    ($($name:literal),* $(,)?) => {
        [$(($name, include_str!(concat!("../data/langid/", $name, ".txt")))),*]
    };
}

const BUNDLED: [(&str, &str); 12] = bundled_texts!(
    "Arabic", "Chinese", "Dutch", "English", "French", "German", "Italian", "Japanese", "Korean",
    "Portuguese", "Russian", "Spanish",
);

/// The bundled corpus, one sentence per line. Every fourth line (index 3, 7,
/// ...) is held out for evaluation; the rest is training text.
pub fn bundled_corpus() -> Vec<BundledLanguage> {
    BUNDLED
        .iter()
        .map(|(name, text)| {
            let mut train = Vec::new();
            let mut heldout = Vec::new();
            for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                if i % 4 == 3 {
                    heldout.push(line);
                } else {
                    train.push(line);
                }
            }
            BundledLanguage { language: LanguageTag::new(*name).expect("static tag"), train, heldout }
        })
        .collect()
}

/// Held-out evaluation texts: consecutive held-out sentences joined with a
/// space until each sample reaches `min_chars` characters. A trailing
/// remainder shorter than `min_chars` is dropped.
pub fn heldout_samples(min_chars: usize) -> Vec<(LanguageTag, String)> {
    let mut out = Vec::new();
    for lang in bundled_corpus() {
        let mut current = String::new();
        for line in lang.heldout {
            if !current.is_empty() {
                current.push(' ');
            }
            current.push_str(line.trim());
            if current.chars().count() >= min_chars {
                out.push((lang.language.clone(), std::mem::take(&mut current)));
            }
        }
    }
    out
}
