//! Per-language near-duplicate removal over prompt embeddings.
//!
//! Semantics are greedy keep-first: walking the input in order, an item
//! survives iff its dot product with every earlier survivor is at most the
//! threshold. [`pairwise_dedup`] computes exactly that, but in tiles:
//!
//! 1. every candidate of a tile is compared, in parallel, against the
//!    survivors that existed before the tile, scanning survivors in cache-sized
//!    row blocks;
//! 2. the tile's remaining candidates are committed one by one against the
//!    survivors added inside the tile.
//!
//! All dot products go through one kernel with a fixed summation order, so
//! the result is bitwise independent of tile size and worker count.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{fold_case, EmbeddingVector, LanguageTag, ModelError, StageCounts};
use crate::par::Workers;

pub const DEDUP: &str = "dedup";
pub const DEFAULT_EMBED_DIM: usize = 256;
pub const DEFAULT_TILE: usize = 256;

/// Target bytes of survivor rows scanned per block.
const BLOCK_BYTES: usize = 128 * 1024;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("embedding provider failed at prompt {index}: {reason}")]
    ProviderFailure { index: usize, reason: String },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("{records} records but {vectors} vectors")]
    AlignmentMismatch { records: usize, vectors: usize },
    #[error("vector cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Anything that turns prompts into raw (not yet normalised) vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, DedupError>;
}

/// Offline embedder: term frequencies of character trigrams of the folded,
/// whitespace-collapsed, space-padded text, hashed (FNV-1a 64) into `dim`
/// buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedNgramEmbedder {
    pub dim: usize,
    pub n: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_EMBED_DIM, n: 3 }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl HashedNgramEmbedder {
    /// The padded character sequence n-grams are taken from.
    pub fn prepare(text: &str) -> Vec<char> {
        let mut chars = vec![' '];
        for word in fold_case(text).split_whitespace() {
            if chars.len() > 1 {
                chars.push(' ');
            }
            chars.extend(word.chars());
        }
        chars.push(' ');
        chars
    }

    /// Bucket index of every n-gram, in text order.
    pub fn buckets(&self, text: &str) -> Vec<usize> {
        let chars = Self::prepare(text);
        let mut buf = String::new();
        chars
            .windows(self.n.min(chars.len()))
            .map(|w| {
                buf.clear();
                buf.extend(w);
                (fnv1a64(buf.as_bytes()) % self.dim as u64) as usize
            })
            .collect()
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for b in self.buckets(text) {
            v[b] += 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, DedupError> {
        Ok(texts.par_iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Embeds and normalises a batch. Any bad prompt or vector fails the whole
/// batch, naming the first offending index.
pub fn embed_batch(
    prompts: &[&str],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>, DedupError> {
    if let Some(index) = prompts.iter().position(|p| p.trim().is_empty()) {
        return Err(DedupError::ProviderFailure { index, reason: "empty prompt".into() });
    }
    let raw = provider.embed(prompts)?;
    if raw.len() != prompts.len() {
        return Err(DedupError::ProviderFailure {
            index: raw.len().min(prompts.len()),
            reason: format!("{} vectors for {} prompts", raw.len(), prompts.len()),
        });
    }
    raw.into_iter()
        .enumerate()
        .map(|(index, v)| {
            if v.len() != provider.dim() {
                return Err(DedupError::ProviderFailure {
                    index,
                    reason: format!("dimension {} instead of {}", v.len(), provider.dim()),
                });
            }
            EmbeddingVector::new(v)
                .map_err(|e: ModelError| DedupError::ProviderFailure { index, reason: e.to_string() })
        })
        .collect()
}

/// Dot product with four interleaved partial sums reduced as
/// `(s0 + s1) + (s2 + s3)`, then the tail added in order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let split = a.len() - a.len() % 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        s0 += x[0] * y[0];
        s1 += x[1] * y[1];
        s2 += x[2] * y[2];
        s3 += x[3] * y[3];
    }
    let mut sum = (s0 + s1) + (s2 + s3);
    for i in split..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

/// `dot(c, r_k)` for four rows at once; each result is bitwise equal to [`dot`].
#[inline]
fn dot4(c: &[f64], r: [&[f64]; 4]) -> [f64; 4] {
    let split = c.len() - c.len() % 4;
    let mut acc = [[0.0f64; 4]; 4];
    let mut i = 0;
    while i < split {
        let x = &c[i..i + 4];
        for (k, row) in r.iter().enumerate() {
            let y = &row[i..i + 4];
            acc[k][0] += x[0] * y[0];
            acc[k][1] += x[1] * y[1];
            acc[k][2] += x[2] * y[2];
            acc[k][3] += x[3] * y[3];
        }
        i += 4;
    }
    let mut out = [0.0; 4];
    for (k, row) in r.iter().enumerate() {
        let mut sum = (acc[k][0] + acc[k][1]) + (acc[k][2] + acc[k][3]);
        for j in split..c.len() {
            sum += c[j] * row[j];
        }
        out[k] = sum;
    }
    out
}

pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DedupError> {
    if a.dim() != b.dim() {
        return Err(DedupError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(dot(a.as_slice(), b.as_slice()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Removal {
    pub index: usize,
    /// The earliest survivor whose similarity exceeds the threshold.
    pub culprit: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DedupResult {
    pub survivors: Vec<usize>,
    /// Sorted by `index`.
    pub removed: Vec<Removal>,
}

impl DedupResult {
    pub fn len(&self) -> usize {
        self.survivors.len() + self.removed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn removal_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.removed.len() as f64 / self.len() as f64
        }
    }

    fn remap(self, positions: &[usize]) -> Self {
        Self {
            survivors: self.survivors.into_iter().map(|i| positions[i]).collect(),
            removed: self
                .removed
                .into_iter()
                .map(|r| Removal { index: positions[r.index], culprit: positions[r.culprit], ..r })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DedupOptions {
    /// Candidates per tile.
    pub tile: usize,
    /// Survivor rows per scanned block; 0 picks a cache-sized block.
    pub block_rows: usize,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for DedupOptions {
    fn default() -> Self {
        Self { tile: DEFAULT_TILE, block_rows: 0, workers: 0 }
    }
}

/// Contiguous row-major store of survivor vectors.
struct Survivors<'a> {
    dim: usize,
    data: Vec<f64>,
    index: Vec<usize>,
    vectors: &'a [EmbeddingVector],
}

impl Survivors<'_> {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn push(&mut self, original: usize) {
        self.data.extend_from_slice(self.vectors[original].as_slice());
        self.index.push(original);
    }
}

/// First survivor among `rows` (in order) with similarity above `threshold`.
fn first_above(
    candidate: &[f64],
    survivors: &Survivors<'_>,
    rows: std::ops::Range<usize>,
    threshold: f64,
) -> Option<(usize, f64)> {
    let mut s = rows.start;
    while s + 4 <= rows.end {
        let sims = dot4(
            candidate,
            [survivors.row(s), survivors.row(s + 1), survivors.row(s + 2), survivors.row(s + 3)],
        );
        if let Some(k) = sims.iter().position(|&v| v > threshold) {
            return Some((s + k, sims[k]));
        }
        s += 4;
    }
    (s..rows.end).find_map(|r| {
        let v = dot(candidate, survivors.row(r));
        (v > threshold).then_some((r, v))
    })
}

/// Greedy keep-first dedup with default options.
pub fn pairwise_dedup(vectors: &[EmbeddingVector], threshold: f64) -> Result<DedupResult, DedupError> {
    pairwise_dedup_with(vectors, threshold, DedupOptions::default())
}

pub fn pairwise_dedup_with(
    vectors: &[EmbeddingVector],
    threshold: f64,
    options: DedupOptions,
) -> Result<DedupResult, DedupError> {
    let Some(first) = vectors.first() else {
        return Ok(DedupResult::default());
    };
    let dim = first.dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(DedupError::DimensionMismatch { left: dim, right: v.dim() });
    }
    let tile = options.tile.max(1);
    let block_rows = match options.block_rows {
        0 => (BLOCK_BYTES / (dim * std::mem::size_of::<f64>())).clamp(4, 1024) / 4 * 4,
        n => n,
    };
    let workers = Workers::new(options.workers);

    let mut survivors = Survivors { dim, data: Vec::new(), index: Vec::new(), vectors };
    let mut removed = Vec::new();

    for start in (0..vectors.len()).step_by(tile) {
        let end = (start + tile).min(vectors.len());
        let known = survivors.len();

        // Phase 1: against survivors from earlier tiles.
        let mut verdicts: Vec<Option<(usize, f64)>> = vec![None; end - start];
        if known > 0 {
            let survivors_ref = &survivors;
            workers.install(|| {
                let per_task = (end - start).div_ceil(rayon::current_num_threads()).max(1);
                verdicts.par_chunks_mut(per_task).enumerate().for_each(|(chunk_no, out)| {
                    let base = start + chunk_no * per_task;
                    for block in (0..known).step_by(block_rows) {
                        let rows = block..(block + block_rows).min(known);
                        for (offset, slot) in out.iter_mut().enumerate() {
                            if slot.is_none() {
                                let c = vectors[base + offset].as_slice();
                                *slot = first_above(c, survivors_ref, rows.clone(), threshold);
                            }
                        }
                    }
                });
            });
        }

        // Phase 2: sequential commit against survivors added in this tile.
        for (offset, verdict) in verdicts.into_iter().enumerate() {
            let i = start + offset;
            let hit = verdict.or_else(|| {
                first_above(vectors[i].as_slice(), &survivors, known..survivors.len(), threshold)
            });
            match hit {
                Some((row, similarity)) => {
                    removed.push(Removal { index: i, culprit: survivors.index[row], similarity })
                }
                None => survivors.push(i),
            }
        }
    }
    Ok(DedupResult { survivors: survivors.index, removed })
}

/// Result of deduplicating a whole corpus language by language.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusDedup<T> {
    pub kept: Vec<T>,
    /// Indices are positions in the full input.
    pub per_language: BTreeMap<LanguageTag, DedupResult>,
}

impl<T> CorpusDedup<T> {
    pub fn stage(&self) -> StageCounts {
        let input: usize = self.per_language.values().map(DedupResult::len).sum();
        StageCounts::new(DEDUP, input as u64, self.kept.len() as u64)
    }
}

/// Dedups each language group independently. `vectors[i]` belongs to
/// `items[i]`; survivors keep their input order.
pub fn dedup_corpus<T, F>(
    items: Vec<T>,
    vectors: &[EmbeddingVector],
    language: F,
    threshold: f64,
    options: DedupOptions,
) -> Result<CorpusDedup<T>, DedupError>
where
    T: Send,
    F: Fn(&T) -> &LanguageTag,
{
    if items.len() != vectors.len() {
        return Err(DedupError::AlignmentMismatch { records: items.len(), vectors: vectors.len() });
    }
    let mut groups: BTreeMap<LanguageTag, Vec<usize>> = BTreeMap::new();
    for (pos, item) in items.iter().enumerate() {
        groups.entry(language(item).clone()).or_default().push(pos);
    }
    let mut per_language = BTreeMap::new();
    let mut keep = vec![false; items.len()];
    for (lang, positions) in groups {
        let group: Vec<EmbeddingVector> = positions.iter().map(|&p| vectors[p].clone()).collect();
        let result = pairwise_dedup_with(&group, threshold, options)?.remap(&positions);
        for &s in &result.survivors {
            keep[s] = true;
        }
        per_language.insert(lang, result);
    }
    let kept = items.into_iter().zip(keep).filter_map(|(item, k)| k.then_some(item)).collect();
    Ok(CorpusDedup { kept, per_language })
}

const CACHE_MAGIC: &[u8; 8] = b"CURVEC\0\0";
const CACHE_VERSION: u32 = 1;
const DTYPE_F64_LE: u32 = 1;

/// Record id to vector map with a versioned binary layout:
///
/// ```text
/// magic[8] version:u32 dtype:u32 dim:u32 count:u64
/// count x ( id_len:u32 id[id_len] dim x f64 )
/// ```
///
/// All integers and floats are little-endian. Entries keep insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorCache {
    dim: usize,
    entries: Vec<(String, EmbeddingVector)>,
}

impl VectorCache {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<(), DedupError> {
        if vector.dim() != self.dim {
            return Err(DedupError::DimensionMismatch { left: self.dim, right: vector.dim() });
        }
        self.entries.push((id.into(), vector));
        Ok(())
    }

    pub fn entries(&self) -> &[(String, EmbeddingVector)] {
        &self.entries
    }

    pub fn to_map(&self) -> BTreeMap<&str, &EmbeddingVector> {
        self.entries.iter().map(|(id, v)| (id.as_str(), v)).collect()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), DedupError> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&DTYPE_F64_LE.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (id, v) in &self.entries {
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id.as_bytes())?;
            for x in v.as_slice() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self, DedupError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(DedupError::Cache("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CACHE_VERSION {
            return Err(DedupError::Cache(format!("unsupported version {version}")));
        }
        let dtype = read_u32(&mut input)?;
        if dtype != DTYPE_F64_LE {
            return Err(DedupError::Cache(format!("unsupported dtype {dtype}")));
        }
        let dim = read_u32(&mut input)? as usize;
        let mut count_bytes = [0u8; 8];
        input.read_exact(&mut count_bytes)?;
        let count = u64::from_le_bytes(count_bytes);
        let mut cache = Self::new(dim);
        let mut buf = vec![0u8; dim * 8];
        for _ in 0..count {
            let id_len = read_u32(&mut input)? as usize;
            let mut id = vec![0u8; id_len];
            input.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| DedupError::Cache("id is not UTF-8".into()))?;
            input.read_exact(&mut buf)?;
            let values = buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            let vector = EmbeddingVector::from_unit(values)
                .map_err(|e| DedupError::Cache(format!("{id}: {e}")))?;
            cache.entries.push((id, vector));
        }
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(DedupError::Cache("trailing bytes".into()));
        }
        Ok(cache)
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, DedupError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
