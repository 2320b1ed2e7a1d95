//! Answer-quality metrics, prediction generation and model comparison.
//!
//! All lexical metrics share one normalization (SQuAD style): lowercase,
//! remove ASCII punctuation, drop the articles `a`, `an`, `the`, then split on
//! whitespace.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use futures::stream::{self, StreamExt};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{complete_with_retry, ChatBackend, ChatMessage, ChatRequest, GenerationParams, LlmError, RetryPolicy};
use crate::model::{Dataset, QAPair};

/// Lowercase, strip ASCII punctuation, remove articles, split on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    static ARTICLES: OnceLock<Regex> = OnceLock::new();
    let articles = ARTICLES.get_or_init(|| Regex::new(r"\b(a|an|the)\b").unwrap());
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    articles.replace_all(&no_punct, " ").split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    const PERFECT: Prf = Prf { precision: 1.0, recall: 1.0, f1: 1.0 };
    const ZERO: Prf = Prf { precision: 0.0, recall: 0.0, f1: 0.0 };

    /// Precision/recall from a match count, with the empty-side conventions:
    /// both sides empty scores 1, exactly one empty scores 0.
    fn from_counts(matched: f64, pred_len: usize, gold_len: usize) -> Prf {
        match (pred_len, gold_len) {
            (0, 0) => Prf::PERFECT,
            (0, _) | (_, 0) => Prf::ZERO,
            _ => Prf::from_pr(matched / pred_len as f64, matched / gold_len as f64),
        }
    }

    fn from_pr(precision: f64, recall: f64) -> Prf {
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }
}

/// Size of the multiset intersection of two token lists.
pub fn overlap_count(pred: &[String], gold: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    pred.iter()
        .filter(|t| match counts.get_mut(t.as_str()) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Bag-of-tokens F1 over normalized answers.
pub fn token_f1(pred: &str, gold: &str) -> Prf {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    Prf::from_counts(overlap_count(&p, &g) as f64, p.len(), g.len())
}

/// Length of the longest common subsequence, O(n·m) time, O(m) memory.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L with β = 1 over normalized token sequences.
pub fn rouge_l(pred: &str, gold: &str) -> Prf {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    Prf::from_counts(lcs_length(&p, &g) as f64, p.len(), g.len())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("embedding failed: {0}")]
pub struct EmbedError(pub String);

/// Produces one vector per token of a text.
///
/// Vectors are compared by dot product after unit normalization; shorter
/// vectors are treated as zero-padded.
pub trait TokenEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>, EmbedError>;
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Greedy max-cosine matching: precision averages each predicted token's best
/// match against the gold tokens, recall the reverse. No idf weighting and no
/// baseline rescaling.
pub fn semantic_f1(pred: &str, gold: &str, embedder: &dyn TokenEmbedder) -> Result<Prf, EmbedError> {
    let p: Vec<Vec<f64>> = embedder.embed(pred)?.into_iter().map(unit).collect();
    let g: Vec<Vec<f64>> = embedder.embed(gold)?.into_iter().map(unit).collect();
    if p.is_empty() || g.is_empty() {
        return Ok(Prf::from_counts(0.0, p.len(), g.len()));
    }
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| -> f64 {
        let sum: f64 = from
            .iter()
            .map(|x| to.iter().map(|y| cosine(x, y)).fold(f64::NEG_INFINITY, f64::max))
            .sum();
        sum / from.len() as f64
    };
    let precision = best(&p, &g);
    let recall = best(&g, &p);
    Ok(Prf::from_pr(precision.clamp(0.0, 1.0), recall.clamp(0.0, 1.0)))
}

/// Deterministic embedder assigning each distinct normalized token its own
/// axis. Cosine is 1 for equal tokens and 0 otherwise, which makes semantic F1
/// collapse to bag-of-tokens matching.
#[derive(Debug, Default)]
pub struct OneHotEmbedder {
    axes: Mutex<HashMap<String, usize>>,
}

impl OneHotEmbedder {
    pub fn new() -> Self {
        Self::default()
    }
}

impl TokenEmbedder for OneHotEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut axes = self.axes.lock().unwrap_or_else(|p| p.into_inner());
        Ok(normalize_answer(text)
            .into_iter()
            .map(|tok| {
                let next = axes.len();
                let axis = *axes.entry(tok).or_insert(next);
                let mut v = vec![0.0; axis + 1];
                v[axis] = 1.0;
                v
            })
            .collect())
    }
}

/// Embedder backed by an HTTP service.
///
/// Contract: `POST {url}` with `{"text": "..."}` returns
/// `{"embeddings": [[f64, ...], ...]}`, one vector per token.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| EmbedError(e.to_string()))?;
        Ok(HttpEmbedder { url: url.into(), client })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f64>>,
}

impl TokenEmbedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<Vec<f64>>, EmbedError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { text: text.to_string() })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EmbedError(e.to_string()))?;
        let body: EmbedResponse = resp.json().map_err(|e| EmbedError(e.to_string()))?;
        Ok(body.embeddings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptMode {
    WithContext,
    WithoutContext,
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "with_context" | "context" => Ok(PromptMode::WithContext),
            "without_context" | "zero_shot" | "no_context" => Ok(PromptMode::WithoutContext),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptMode::WithContext => "WITH_CONTEXT",
            PromptMode::WithoutContext => "WITHOUT_CONTEXT",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("pair `{0}` has no context for a WITH_CONTEXT prompt")]
    MissingContext(String),
    #[error("unknown pair `{0}`")]
    UnknownPair(String),
    #[error("predictions mix models or modes: {0}")]
    MixedPredictions(String),
    #[error("no predictions to evaluate")]
    NoPredictions,
    #[error("duplicate prediction for `{0}`")]
    DuplicatePrediction(String),
    #[error("report for ({model}, {mode}) appears twice")]
    DuplicateReport { model: String, mode: PromptMode },
    #[error("no reports to compare")]
    NoReports,
    #[error("baseline must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("generation failed for `{pair_id}` after retries: {source}")]
    Generation { pair_id: String, source: LlmError, completed: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: malformed prediction: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Model input for one pair.
pub fn build_prompt(pair: &QAPair, mode: PromptMode) -> Result<String, EvalError> {
    match mode {
        PromptMode::WithoutContext => Ok(format!("question: {}\nanswer:", pair.question)),
        PromptMode::WithContext => {
            let context = pair
                .context
                .as_deref()
                .filter(|c| !c.trim().is_empty())
                .ok_or_else(|| EvalError::MissingContext(pair.id.clone()))?;
            Ok(format!("context: {context}\nquestion: {}\nanswer:", pair.question))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair_id: String,
    pub output: String,
    pub model_name: String,
    pub mode: PromptMode,
}

/// Reads a prediction JSONL file. A missing file reads as empty.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, EvalError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(vec![]);
    }
    let io = |source| EvalError::Io { path: path.into(), source };
    let file = File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Malformed {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Settings for a prediction run.
#[derive(Debug, Clone)]
pub struct PredictConfig {
    pub model_name: String,
    pub mode: PromptMode,
    pub params: GenerationParams,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
}

/// Generates one prediction per split id, appending each to `out_path` as it
/// completes. Ids already present in the file are not requested again.
/// Returns all predictions for the split, in split order.
pub async fn generate_predictions<B: ChatBackend>(
    split_ids: &[String],
    dataset: &Dataset,
    backend: &B,
    config: &PredictConfig,
    out_path: impl AsRef<Path>,
) -> Result<Vec<Prediction>, EvalError> {
    let out_path = out_path.as_ref();
    let index = dataset.index();
    let mut prompts = Vec::with_capacity(split_ids.len());
    for id in split_ids {
        let pair = index.get(id.as_str()).ok_or_else(|| EvalError::UnknownPair(id.clone()))?;
        prompts.push((id.clone(), build_prompt(pair, config.mode)?));
    }

    let existing = load_predictions(out_path)?;
    let done: HashSet<&str> = existing
        .iter()
        .filter(|p| p.model_name == config.model_name && p.mode == config.mode)
        .map(|p| p.pair_id.as_str())
        .collect();
    let todo: Vec<&(String, String)> = prompts.iter().filter(|(id, _)| !done.contains(id.as_str())).collect();
    log::info!("predict: {} to request, {} already done", todo.len(), prompts.len() - todo.len());

    let io = |source| EvalError::Io { path: out_path.into(), source };
    let writer = Mutex::new(OpenOptions::new().create(true).append(true).open(out_path).map_err(io)?);
    let writer = &writer;
    let results: Vec<Result<Prediction, EvalError>> = stream::iter(todo)
        .map(|(pair_id, prompt)| async move {
            let request = ChatRequest {
                model: config.model_name.clone(),
                messages: vec![ChatMessage::user(prompt.clone())],
                temperature: config.params.temperature,
                max_tokens: config.params.max_tokens,
                seed: Some(config.params.seed),
            };
            let output = complete_with_retry(backend, &request, &config.retry).await.map_err(|source| {
                EvalError::Generation { pair_id: pair_id.clone(), source, completed: 0 }
            })?;
            let prediction = Prediction {
                pair_id: pair_id.clone(),
                output: output.trim().to_string(),
                model_name: config.model_name.clone(),
                mode: config.mode,
            };
            let mut line = serde_json::to_vec(&prediction)?;
            line.push(b'\n');
            let mut file = writer.lock().unwrap_or_else(|p| p.into_inner());
            file.write_all(&line).map_err(io)?;
            Ok(prediction)
        })
        .buffer_unordered(config.max_concurrency.max(1))
        .collect()
        .await;

    let mut by_id: HashMap<String, Prediction> = existing
        .into_iter()
        .filter(|p| p.model_name == config.model_name && p.mode == config.mode)
        .map(|p| (p.pair_id.clone(), p))
        .collect();
    let mut first_error = None;
    for r in results {
        match r {
            Ok(p) => {
                by_id.insert(p.pair_id.clone(), p);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(mut e) = first_error {
        if let EvalError::Generation { completed, .. } = &mut e {
            *completed = by_id.len();
        }
        return Err(e);
    }
    Ok(split_ids.iter().filter_map(|id| by_id.remove(id)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub f1: f64,
    pub rouge_l: f64,
    pub semantic_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub pair_id: String,
    pub scores: ScoreTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub f1: Vec<f64>,
    pub rouge_l: Vec<f64>,
    pub semantic_f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub mode: PromptMode,
    /// Sorted by pair id.
    pub per_example: Vec<ExampleScore>,
    pub means: ScoreTriple,
    pub distribution_export: ScoreDistribution,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Scores predictions against the dataset's gold answers.
pub fn evaluate_predictions(
    predictions: &[Prediction],
    dataset: &Dataset,
    embedder: &dyn TokenEmbedder,
) -> Result<EvalReport, EvalError> {
    let first = predictions.first().ok_or(EvalError::NoPredictions)?;
    let index = dataset.index();
    let mut ordered: Vec<&Prediction> = predictions.iter().collect();
    ordered.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    let mut per_example = Vec::with_capacity(ordered.len());
    for (i, p) in ordered.iter().enumerate() {
        if p.model_name != first.model_name || p.mode != first.mode {
            return Err(EvalError::MixedPredictions(format!(
                "({}, {}) vs ({}, {})",
                first.model_name, first.mode, p.model_name, p.mode
            )));
        }
        if i > 0 && ordered[i - 1].pair_id == p.pair_id {
            return Err(EvalError::DuplicatePrediction(p.pair_id.clone()));
        }
        let gold = index.get(p.pair_id.as_str()).ok_or_else(|| EvalError::UnknownPair(p.pair_id.clone()))?;
        per_example.push(ExampleScore {
            pair_id: p.pair_id.clone(),
            scores: ScoreTriple {
                f1: token_f1(&p.output, &gold.answer).f1,
                rouge_l: rouge_l(&p.output, &gold.answer).f1,
                semantic_f1: semantic_f1(&p.output, &gold.answer, embedder)?.f1,
            },
        });
    }
    let distribution_export = ScoreDistribution {
        f1: per_example.iter().map(|e| e.scores.f1).collect(),
        rouge_l: per_example.iter().map(|e| e.scores.rouge_l).collect(),
        semantic_f1: per_example.iter().map(|e| e.scores.semantic_f1).collect(),
    };
    let means = ScoreTriple {
        f1: mean(&distribution_export.f1),
        rouge_l: mean(&distribution_export.rouge_l),
        semantic_f1: mean(&distribution_export.semantic_f1),
    };
    Ok(EvalReport {
        model_name: first.model_name.clone(),
        mode: first.mode,
        per_example,
        means,
        distribution_export,
    })
}

impl EvalReport {
    /// `pair_id,f1,rouge_l,semantic_f1` rows, one per example.
    pub fn write_distribution_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "mode", "pair_id", "f1", "rouge_l", "semantic_f1"])?;
        let mode = self.mode.to_string();
        for e in &self.per_example {
            w.write_record([
                self.model_name.as_str(),
                mode.as_str(),
                e.pair_id.as_str(),
                &e.scores.f1.to_string(),
                &e.scores.rouge_l.to_string(),
                &e.scores.semantic_f1.to_string(),
            ])?;
        }
        w.flush().map_err(|source| EvalError::Io { path: PathBuf::from("<csv>"), source })?;
        Ok(())
    }
}

pub const METRIC_NAMES: [&str; 3] = ["F1", "ROUGE-L", "Semantic F1"];

/// Metric-by-model matrix of mean scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// Column headers: `(model, mode)`.
    pub columns: Vec<(String, PromptMode)>,
    /// `values[metric][column]`, metrics in [`METRIC_NAMES`] order.
    pub values: Vec<Vec<f64>>,
    /// Index of the best column per metric (first on ties).
    pub best: Vec<usize>,
}

pub fn compare_models(reports: &[EvalReport]) -> Result<ComparisonTable, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let mut seen = HashSet::new();
    for r in reports {
        if !seen.insert((r.model_name.as_str(), r.mode)) {
            return Err(EvalError::DuplicateReport { model: r.model_name.clone(), mode: r.mode });
        }
    }
    let columns = reports.iter().map(|r| (r.model_name.clone(), r.mode)).collect();
    let values: Vec<Vec<f64>> = vec![
        reports.iter().map(|r| r.means.f1).collect(),
        reports.iter().map(|r| r.means.rouge_l).collect(),
        reports.iter().map(|r| r.means.semantic_f1).collect(),
    ];
    let best = values
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, v)| if *v > row[best] { i } else { best })
        })
        .collect();
    Ok(ComparisonTable { columns, values, best })
}

impl ComparisonTable {
    fn header(&self, i: usize) -> String {
        let (model, mode) = &self.columns[i];
        match mode {
            PromptMode::WithContext => format!("{model} (ctx)"),
            PromptMode::WithoutContext => model.clone(),
        }
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string()];
        header.extend((0..self.columns.len()).map(|i| self.header(i)));
        w.write_record(&header)?;
        for (m, row) in self.values.iter().enumerate() {
            let mut rec = vec![METRIC_NAMES[m].to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.4}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Io {
            path: PathBuf::from("<csv>"),
            source: std::io::Error::other(e.to_string()),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Aligned plain-text table; the best value per metric is starred.
    pub fn to_text(&self) -> String {
        let headers: Vec<String> = (0..self.columns.len()).map(|i| self.header(i)).collect();
        let cells: Vec<Vec<String>> = self
            .values
            .iter()
            .enumerate()
            .map(|(m, row)| {
                row.iter()
                    .enumerate()
                    .map(|(i, v)| if self.best[m] == i { format!("{v:.4}*") } else { format!("{v:.4} ") })
                    .collect()
            })
            .collect();
        let first_w = METRIC_NAMES.iter().map(|m| m.len()).max().unwrap_or(0).max("Metric".len());
        let widths: Vec<usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| cells.iter().map(|r| r[i].len()).max().unwrap_or(0).max(h.len()))
            .collect();
        let mut out = format!("{:<first_w$}", "Metric");
        for (h, w) in headers.iter().zip(&widths) {
            out.push_str(&format!(" | {h:>w$}"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(first_w));
        for w in &widths {
            out.push_str(&format!("-+-{}", "-".repeat(*w)));
        }
        out.push('\n');
        for (m, row) in cells.iter().enumerate() {
            out.push_str(&format!("{:<first_w$}", METRIC_NAMES[m]));
            for (c, w) in row.iter().zip(&widths) {
                out.push_str(&format!(" | {c:>w$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Percentage change from `base` to `improved`.
pub fn relative_improvement(base: f64, improved: f64) -> Result<f64, EvalError> {
    if base <= 0.0 || base.is_nan() {
        return Err(EvalError::NonPositiveBase(base));
    }
    Ok(100.0 * (improved - base) / base)
}
