//! Canonical data model: QA pairs, versioned datasets, splits and statistics.
//!
//! Datasets are persisted as JSONL, one [`QAPair`] per line, with the fields
//! always written in the order
//! `id, source, question, answer, version, parent_id, provenance, context`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::source::Source;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Version {
    V1,
    V2,
    V3,
    Synthetic,
}

impl Version {
    /// Id suffix for records derived at this version; V1 ids carry none.
    pub fn id_suffix(self) -> &'static str {
        match self {
            Version::V1 => "",
            Version::V2 => ".v2",
            Version::V3 => ".v3",
            Version::Synthetic => ".syn",
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Version::V1 => "V1",
            Version::V2 => "V2",
            Version::V3 => "V3",
            Version::Synthetic => "SYNTHETIC",
        })
    }
}

impl FromStr for Version {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "V1" | "1" | "1.0" | "V1.0" => Ok(Version::V1),
            "V2" | "2" | "2.0" | "V2.0" => Ok(Version::V2),
            "V3" | "3" | "3.0" | "V3.0" => Ok(Version::V3),
            "SYNTHETIC" | "SYN" => Ok(Version::Synthetic),
            _ => Err(ModelError::UnknownVersion(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Original,
    Synthetic,
}

/// One question/answer record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub source: Source,
    pub question: String,
    pub answer: String,
    pub version: Version,
    pub parent_id: Option<String>,
    pub provenance: Provenance,
    pub context: Option<String>,
}

impl QAPair {
    /// Checks the per-record invariants.
    ///
    /// Synthetic pairs may carry an empty answer: they are created from an
    /// accepted synthetic question and wait for a human-entered answer.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: &str| {
            Err(ModelError::InvalidPair { id: self.id.clone(), reason: reason.to_string() })
        };
        if self.id.trim().is_empty() {
            return fail("empty id");
        }
        if self.question.trim().is_empty() {
            return fail("empty question");
        }
        if self.answer.trim().is_empty() && self.version != Version::Synthetic {
            return fail("empty answer");
        }
        match (self.version, &self.parent_id, self.provenance) {
            (Version::V1, Some(_), _) => fail("V1 pair must not have a parent_id"),
            (Version::V2 | Version::V3, None, _) => fail("derived pair requires a parent_id"),
            (Version::Synthetic, None, _) => fail("synthetic pair requires a parent_id"),
            (Version::Synthetic, _, Provenance::Original) => {
                fail("synthetic-version pair must have SYNTHETIC provenance")
            }
            (Version::V1 | Version::V2 | Version::V3, _, Provenance::Synthetic) => {
                fail("versioned original pair cannot have SYNTHETIC provenance")
            }
            _ => Ok(()),
        }
    }

    /// The id stem shared by every version of this record.
    pub fn stem(&self) -> &str {
        id_stem(&self.id)
    }
}

/// Strips a version suffix (`.v2`, `.v3`, `.syn`) from an id.
pub fn id_stem(id: &str) -> &str {
    for suffix in [".v2", ".v3", ".syn"] {
        if let Some(stem) = id.strip_suffix(suffix) {
            return stem;
        }
    }
    id
}

/// `<source>-<ordinal>` with a five-digit zero-padded ordinal.
pub fn v1_id(source: Source, ordinal: usize) -> String {
    format!("{}-{:05}", source.key(), ordinal)
}

pub fn derived_id(parent_id: &str, version: Version) -> String {
    format!("{}{}", id_stem(parent_id), version.id_suffix())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub version: Version,
    pub pairs: Vec<QAPair>,
    pub created_at: DateTime<Utc>,
    pub notes: String,
}

impl Dataset {
    pub fn new(version: Version, pairs: Vec<QAPair>) -> Self {
        Dataset { version, pairs, created_at: Utc::now(), notes: String::new() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QAPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    pub fn index(&self) -> HashMap<&str, &QAPair> {
        self.pairs.iter().map(|p| (p.id.as_str(), p)).collect()
    }

    /// Validates every pair, version consistency and id uniqueness.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = HashSet::with_capacity(self.pairs.len());
        for pair in &self.pairs {
            pair.validate()?;
            if pair.version != self.version {
                return Err(ModelError::VersionMismatch {
                    expected: self.version,
                    found: pair.version,
                    id: pair.id.clone(),
                });
            }
            if !seen.insert(pair.id.as_str()) {
                return Err(ModelError::DuplicateId(pair.id.clone()));
            }
        }
        Ok(())
    }

    /// Content equality, ignoring `created_at` and `notes`.
    pub fn same_content(&self, other: &Dataset) -> bool {
        self.version == other.version && self.pairs == other.pairs
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine { path: PathBuf, line: usize, message: String },
    #[error("invalid pair `{id}`: {reason}")]
    InvalidPair { id: String, reason: String },
    #[error("pair `{id}` has version {found}, expected {expected}")]
    VersionMismatch { expected: Version, found: Version, id: String },
    #[error("duplicate pair id `{0}`")]
    DuplicateId(String),
    #[error("unknown dataset version `{0}`")]
    UnknownVersion(String),
    #[error("split counts {requested} exceed dataset size {available}")]
    SplitTooLarge { requested: usize, available: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("lineage broken at `{id}`: {reason}")]
    Lineage { id: String, reason: String },
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io { path: path.to_path_buf(), source }
}

/// Writes `dataset` as JSONL. Invariant-violating datasets are refused.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    dataset.validate()?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for pair in &dataset.pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Loads a JSONL dataset and validates all invariants.
///
/// The dataset version comes from `expected_version`, else from the first
/// record; an empty file without an expected version loads as V1.
pub fn load_dataset(
    path: impl AsRef<Path>,
    expected_version: Option<Version>,
) -> Result<Dataset, ModelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: QAPair = serde_json::from_str(&line).map_err(|e| ModelError::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    let version = expected_version
        .or_else(|| pairs.first().map(|p| p.version))
        .unwrap_or(Version::V1);
    let dataset = Dataset::new(version, pairs);
    dataset.validate()?;
    Ok(dataset)
}

/// Train/validation/test id assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub seed: u64,
    pub source_version: Version,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub const fn new(train: usize, val: usize, test: usize) -> Self {
        SplitCounts { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts::new(2383, 596, 340)
    }
}

/// Seeded shuffle of the sorted pair ids followed by an in-order partition.
///
/// Ids are sorted before shuffling, so the result depends only on the id set,
/// the counts and the seed, not on the order pairs appear in the dataset.
pub fn split_dataset(
    dataset: &Dataset,
    counts: SplitCounts,
    seed: u64,
) -> Result<Splits, ModelError> {
    let mut ids: Vec<String> = dataset.pairs.iter().map(|p| p.id.clone()).collect();
    let (train_ids, val_ids, test_ids) = split_ids(&mut ids, counts, seed)?;
    Ok(Splits { seed, source_version: dataset.version, train_ids, val_ids, test_ids })
}

pub(crate) fn split_ids(
    ids: &mut Vec<String>,
    counts: SplitCounts,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>, Vec<String>), ModelError> {
    if counts.total() > ids.len() {
        return Err(ModelError::SplitTooLarge { requested: counts.total(), available: ids.len() });
    }
    ids.sort_unstable();
    SplitMix64::new(seed).shuffle(ids);
    let mut rest = ids.drain(..);
    let train = rest.by_ref().take(counts.train).collect();
    let val = rest.by_ref().take(counts.val).collect();
    let test = rest.by_ref().take(counts.test).collect();
    Ok((train, val, test))
}

pub fn save_splits(splits: &Splits, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, splits)?;
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn load_splits(path: impl AsRef<Path>) -> Result<Splits, ModelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub per_source_counts: BTreeMap<Source, usize>,
    pub avg_question_len_words: f64,
    pub avg_answer_len_words: f64,
    pub total_pairs: usize,
}

/// Number of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn dataset_stats(dataset: &Dataset) -> Result<StatsReport, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut per_source_counts = BTreeMap::new();
    let (mut q_words, mut a_words) = (0usize, 0usize);
    for pair in &dataset.pairs {
        *per_source_counts.entry(pair.source).or_insert(0) += 1;
        q_words += word_count(&pair.question);
        a_words += word_count(&pair.answer);
    }
    let n = dataset.len() as f64;
    Ok(StatsReport {
        per_source_counts,
        avg_question_len_words: q_words as f64 / n,
        avg_answer_len_words: a_words as f64 / n,
        total_pairs: dataset.len(),
    })
}

/// Checks that every pair of `latest` traces back through `chain` (newest
/// first) to a V1 pair.
pub fn verify_lineage(latest: &Dataset, chain: &[&Dataset]) -> Result<(), ModelError> {
    let indices: Vec<HashMap<&str, &QAPair>> = chain.iter().map(|d| d.index()).collect();
    for pair in &latest.pairs {
        let mut current = pair;
        let mut depth = 0;
        while current.version != Version::V1 {
            let parent_id = current.parent_id.as_deref().ok_or_else(|| ModelError::Lineage {
                id: current.id.clone(),
                reason: "missing parent_id".into(),
            })?;
            let parent = indices
                .iter()
                .find_map(|idx| idx.get(parent_id).copied())
                .ok_or_else(|| ModelError::Lineage {
                    id: current.id.clone(),
                    reason: format!("parent `{parent_id}` not found"),
                })?;
            current = parent;
            depth += 1;
            if depth > chain.len() + 1 {
                return Err(ModelError::Lineage { id: pair.id.clone(), reason: "cycle".into() });
            }
        }
    }
    Ok(())
}
