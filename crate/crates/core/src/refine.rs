//! LLM-assisted refinement stages and application of reviewed proposals.
//!
//! A stage run sends one prompt per pair to a chat backend and stores the
//! reply as a `PENDING` [`RefinementRecord`]. Reviewers then accept, edit or
//! reject each record, and [`apply_decisions`] folds the verdicts into the
//! next dataset version.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

use chrono::Utc;
use futures::stream::{self, StreamExt};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{complete_with_retry, ChatBackend, ChatMessage, ChatRequest, LlmClientConfig, LlmError};
use crate::model::{derived_id, split_ids, Dataset, ModelError, Provenance, QAPair, SplitCounts, Version};
use crate::store::{RecordStatus, RecordStore, RefinementRecord, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Rephrase,
    Summarize,
    SynthQuestion,
    Context,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Rephrase, Stage::Summarize, Stage::SynthQuestion, Stage::Context];

    pub fn key(self) -> &'static str {
        match self {
            Stage::Rephrase => "REPHRASE",
            Stage::Summarize => "SUMMARIZE",
            Stage::SynthQuestion => "SYNTH_QUESTION",
            Stage::Context => "CONTEXT",
        }
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Stage::Summarize => &["{answer}"],
            Stage::Rephrase | Stage::SynthQuestion | Stage::Context => &["{question}", "{answer}"],
        }
    }

    /// Whether a dataset at `version` is valid input for this stage.
    pub fn accepts(self, version: Version) -> bool {
        match self {
            Stage::Rephrase => version == Version::V1,
            Stage::Summarize => version == Version::V2,
            Stage::SynthQuestion | Stage::Context => matches!(version, Version::V2 | Version::V3),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.to_ascii_uppercase().replace('-', "_");
        Stage::ALL.into_iter().find(|st| st.key() == upper).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub stage: Stage,
    pub template: String,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), RefineError> {
        for placeholder in self.stage.required_placeholders() {
            if !self.template.contains(placeholder) {
                return Err(RefineError::Template(format!(
                    "{} template is missing {placeholder}",
                    self.stage
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self, pair: &QAPair) -> String {
        self.template
            .replace("{question}", &pair.question)
            .replace("{answer}", &pair.answer)
            .replace("{context}", pair.context.as_deref().unwrap_or(""))
            .trim()
            .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub templates: Vec<PromptTemplate>,
}

const DEFAULT_PROMPTS: &str = include_str!("../data/prompts.toml");

impl PromptTemplates {
    pub fn from_toml_str(text: &str) -> Result<Self, RefineError> {
        let parsed: PromptTemplates = toml::from_str(text).map_err(|e| RefineError::Template(e.to_string()))?;
        for t in &parsed.templates {
            t.validate()?;
        }
        Ok(parsed)
    }

    /// Loads templates from a `.toml` or `.json` file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RefineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RefineError::Template(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let parsed: PromptTemplates =
                serde_json::from_str(&text).map_err(|e| RefineError::Template(e.to_string()))?;
            for t in &parsed.templates {
                t.validate()?;
            }
            Ok(parsed)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn get(&self, stage: Stage) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.stage == stage)
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_PROMPTS).expect("bundled prompts are valid")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("stage {stage} cannot run on a {found} dataset")]
    WrongVersion { stage: Stage, found: Version },
    #[error("no prompt template for stage {0}")]
    MissingTemplate(Stage),
    #[error("template error: {0}")]
    Template(String),
    #[error("endpoint unreachable after retries ({persisted} records persisted): {message}")]
    Unreachable { persisted: usize, message: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("record `{0}` is still PENDING")]
    PendingRecord(String),
    #[error("record references unknown pair `{0}`")]
    UnknownPair(String),
    #[error("cannot derive a {to} dataset from {from}")]
    InvalidTransition { from: Version, to: Version },
    #[error("record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("requested {requested} synthetic pairs but only {available} are available")]
    CountsExceed { requested: usize, available: usize },
    #[error("synthetic pair `{0}` has no answer yet")]
    UnansweredSynthetic(String),
}

/// `Question: …` / `Answer: …` block used for rephrase proposals.
pub fn format_qa(question: &str, answer: &str) -> String {
    format!("Question: {question}\nAnswer: {answer}")
}

/// Parses a `Question:` / `Answer:` block (labels are case-insensitive).
pub fn parse_qa(text: &str) -> Option<(String, String)> {
    static LABELS: OnceLock<(Regex, Regex)> = OnceLock::new();
    let (q_re, a_re) = LABELS
        .get_or_init(|| (Regex::new("(?i)question:").unwrap(), Regex::new("(?i)answer:").unwrap()));
    let q = q_re.find(text)?;
    let a = a_re.find_at(text, q.end())?;
    let question = text[q.end()..a.start()].trim();
    let answer = text[a.end()..].trim();
    (!question.is_empty() && !answer.is_empty()).then(|| (question.to_string(), answer.to_string()))
}

/// The dataset text a stage proposes to replace.
pub fn original_snapshot(pair: &QAPair, stage: Stage) -> String {
    match stage {
        Stage::Rephrase => format_qa(&pair.question, &pair.answer),
        Stage::Summarize => pair.answer.clone(),
        Stage::SynthQuestion => pair.question.clone(),
        Stage::Context => pair.context.clone().unwrap_or_default(),
    }
}

fn check_output(stage: Stage, text: &str) -> Result<String, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty response".into());
    }
    if stage == Stage::Rephrase && parse_qa(text).is_none() {
        return Err("response is not a Question:/Answer: block".into());
    }
    Ok(text.to_string())
}

/// Request parameters for refinement calls.
pub const REFINE_TEMPERATURE: f64 = 0.0;
pub const REFINE_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, Default)]
pub struct StageRun {
    /// New `PENDING` records, in dataset order.
    pub created: Vec<RefinementRecord>,
    /// New `FAILED` records, in dataset order.
    pub failed: Vec<RefinementRecord>,
    /// Pairs skipped because they already have a live record.
    pub skipped: usize,
    /// Pairs for which at least one request was sent.
    pub requested: usize,
}

enum Outcome {
    Stored(RefinementRecord),
    NotAttempted,
    Unreachable(String),
    StoreFailed(StoreError),
}

/// Runs one refinement stage over `dataset`.
///
/// Pairs that already hold a `PENDING`, `ACCEPTED` or `EDITED` record for the
/// stage are skipped, so reruns only cover new, failed or rejected pairs. At
/// most `config.max_concurrency` requests are in flight. Every record is
/// persisted as soon as its reply arrives. If the endpoint stays unreachable
/// after retries, no further requests are started and
/// [`RefineError::Unreachable`] is returned once in-flight work settles.
pub async fn run_stage<B: ChatBackend>(
    dataset: &Dataset,
    stage: Stage,
    backend: &B,
    config: &LlmClientConfig,
    templates: &PromptTemplates,
    store: &RecordStore,
) -> Result<StageRun, RefineError> {
    config.validate()?;
    if !stage.accepts(dataset.version) {
        return Err(RefineError::WrongVersion { stage, found: dataset.version });
    }
    let template = templates.get(stage).ok_or(RefineError::MissingTemplate(stage))?;
    if template.stage != stage {
        return Err(RefineError::Template(format!("template for {} used for {stage}", template.stage)));
    }
    template.validate()?;

    let mut attempts: HashMap<String, usize> = HashMap::new();
    let mut live: HashSet<String> = HashSet::new();
    for r in store.for_stage(stage) {
        *attempts.entry(r.pair_id.clone()).or_default() += 1;
        if matches!(r.status, RecordStatus::Pending | RecordStatus::Accepted | RecordStatus::Edited) {
            live.insert(r.pair_id);
        }
    }
    let todo: Vec<&QAPair> = dataset.pairs.iter().filter(|p| !live.contains(&p.id)).collect();
    let skipped = dataset.len() - todo.len();
    log::info!("{stage}: {} pairs to request, {skipped} already covered", todo.len());

    let abort = AtomicBool::new(false);
    let abort = &abort;
    let attempts = &attempts;
    let outcomes: Vec<(usize, Outcome)> = stream::iter(todo.iter().copied().enumerate())
        .map(|(order, pair)| async move {
            if abort.load(Ordering::SeqCst) {
                return (order, Outcome::NotAttempted);
            }
            let request = ChatRequest {
                model: config.model_name.clone(),
                messages: vec![ChatMessage::user(template.render(pair))],
                temperature: REFINE_TEMPERATURE,
                max_tokens: REFINE_MAX_TOKENS,
                seed: Some(0),
            };
            let (status, proposed, note) = match complete_with_retry(backend, &request, &config.retry).await {
                Ok(text) => match check_output(stage, &text) {
                    Ok(proposed) => (RecordStatus::Pending, proposed, None),
                    Err(reason) => (RecordStatus::Failed, text, Some(reason)),
                },
                Err(LlmError::Unreachable(message)) => {
                    abort.store(true, Ordering::SeqCst);
                    return (order, Outcome::Unreachable(message));
                }
                Err(e) => (RecordStatus::Failed, String::new(), Some(e.to_string())),
            };
            let attempt = attempts.get(&pair.id).copied().unwrap_or(0) + 1;
            let record = RefinementRecord {
                id: format!("{}:{}:{attempt}", pair.id, stage.key().to_ascii_lowercase()),
                pair_id: pair.id.clone(),
                stage,
                original: original_snapshot(pair, stage),
                proposed,
                status,
                final_text: None,
                reviewer_note: note,
                model_name: config.model_name.clone(),
                created_at: Utc::now(),
            };
            match store.insert(record.clone()) {
                Ok(()) => (order, Outcome::Stored(record)),
                Err(e) => (order, Outcome::StoreFailed(e)),
            }
        })
        .buffer_unordered(config.max_concurrency)
        .collect()
        .await;

    let mut outcomes = outcomes;
    outcomes.sort_by_key(|(order, _)| *order);
    let mut run = StageRun { skipped, ..Default::default() };
    let mut unreachable = None;
    for (_, outcome) in outcomes {
        match outcome {
            Outcome::Stored(r) => {
                run.requested += 1;
                if r.status == RecordStatus::Pending {
                    run.created.push(r);
                } else {
                    run.failed.push(r);
                }
            }
            Outcome::Unreachable(message) => {
                run.requested += 1;
                unreachable.get_or_insert(message);
            }
            Outcome::NotAttempted => {}
            Outcome::StoreFailed(e) => return Err(e.into()),
        }
    }
    if let Some(message) = unreachable {
        return Err(RefineError::Unreachable { persisted: run.created.len() + run.failed.len(), message });
    }
    Ok(run)
}

/// The stage implied by moving from `from` to `to`.
pub fn stage_for_transition(from: Version, to: Version) -> Result<Stage, RefineError> {
    match (from, to) {
        (Version::V1, Version::V2) => Ok(Stage::Rephrase),
        (Version::V2, Version::V3) => Ok(Stage::Summarize),
        (Version::V2 | Version::V3, Version::Synthetic) => Ok(Stage::SynthQuestion),
        (a, b) if a == b && a != Version::Synthetic && a != Version::V1 => Ok(Stage::Context),
        _ => Err(RefineError::InvalidTransition { from, to }),
    }
}

/// Builds the next dataset from reviewed records.
///
/// The stage is implied by the version move: V1→V2 rephrase, V2→V3
/// summarize, V2/V3→V2/V3 (same version) context, V2/V3→SYNTHETIC synthetic
/// questions. Records of other stages are ignored. Accepted or edited records
/// replace the stage's text; pairs with only rejected (or no) records keep
/// their original text. For synthetic questions the result holds only the new
/// synthetic pairs, with empty answers.
pub fn apply_decisions(
    dataset: &Dataset,
    records: &[RefinementRecord],
    target_version: Version,
) -> Result<Dataset, RefineError> {
    let stage = stage_for_transition(dataset.version, target_version)?;
    let index = dataset.index();
    let mut chosen: HashMap<&str, &RefinementRecord> = HashMap::new();
    for r in records.iter().filter(|r| r.stage == stage) {
        if !index.contains_key(r.pair_id.as_str()) {
            return Err(RefineError::UnknownPair(r.pair_id.clone()));
        }
        match r.status {
            RecordStatus::Pending => return Err(RefineError::PendingRecord(r.id.clone())),
            RecordStatus::Accepted | RecordStatus::Edited => {
                r.check_invariants()
                    .map_err(|reason| RefineError::InvalidRecord { id: r.id.clone(), reason })?;
                let slot = chosen.entry(r.pair_id.as_str()).or_insert(r);
                if (r.created_at, &r.id) > (slot.created_at, &slot.id) {
                    *slot = r;
                }
            }
            RecordStatus::Rejected | RecordStatus::Failed => {}
        }
    }

    if stage == Stage::SynthQuestion {
        let pairs = dataset
            .pairs
            .iter()
            .filter_map(|parent| {
                let text = chosen.get(parent.id.as_str())?.decided_text()?;
                Some(QAPair {
                    id: derived_id(&parent.id, Version::Synthetic),
                    source: parent.source,
                    question: text.trim().to_string(),
                    answer: String::new(),
                    version: Version::Synthetic,
                    parent_id: Some(parent.id.clone()),
                    provenance: Provenance::Synthetic,
                    context: None,
                })
            })
            .collect();
        let out = Dataset::new(Version::Synthetic, pairs);
        out.validate()?;
        return Ok(out);
    }

    let mut pairs = Vec::with_capacity(dataset.len());
    for pair in &dataset.pairs {
        let mut next = pair.clone();
        if stage != Stage::Context {
            next.id = derived_id(&pair.id, target_version);
            next.parent_id = Some(pair.id.clone());
            next.version = target_version;
        }
        if let Some(record) = chosen.get(pair.id.as_str()) {
            let text = record.decided_text().unwrap_or_default().trim();
            match stage {
                Stage::Rephrase => {
                    let (q, a) = parse_qa(text).ok_or_else(|| RefineError::InvalidRecord {
                        id: record.id.clone(),
                        reason: "final text is not a Question:/Answer: block".into(),
                    })?;
                    next.question = q;
                    next.answer = a;
                }
                Stage::Summarize => next.answer = text.to_string(),
                Stage::Context => next.context = Some(text.to_string()),
                Stage::SynthQuestion => unreachable!("handled above"),
            }
        }
        pairs.push(next);
    }
    let mut out = Dataset::new(target_version, pairs);
    out.notes = format!("{stage} applied to {} dataset", dataset.version);
    out.validate()?;
    Ok(out)
}

/// Fills human-sourced answers into synthetic pairs, keyed by pair id.
pub fn fill_synthetic_answers(
    dataset: &Dataset,
    answers: &HashMap<String, String>,
) -> Result<Dataset, RefineError> {
    if dataset.version != Version::Synthetic {
        return Err(RefineError::InvalidTransition { from: dataset.version, to: Version::Synthetic });
    }
    let index = dataset.index();
    if let Some(unknown) = answers.keys().find(|id| !index.contains_key(id.as_str())) {
        return Err(RefineError::UnknownPair(unknown.clone()));
    }
    let mut out = dataset.clone();
    for pair in &mut out.pairs {
        if let Some(answer) = answers.get(&pair.id) {
            pair.answer = answer.trim().to_string();
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTotals {
    pub train: usize,
    pub val: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSplit {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Seeded train/validation split of answered synthetic pairs.
pub fn synthetic_split(
    dataset: &Dataset,
    train: usize,
    val: usize,
    seed: u64,
) -> Result<(SyntheticSplit, SyntheticTotals), RefineError> {
    if let Some(p) = dataset.pairs.iter().find(|p| p.answer.trim().is_empty()) {
        return Err(RefineError::UnansweredSynthetic(p.id.clone()));
    }
    if train + val > dataset.len() {
        return Err(RefineError::CountsExceed { requested: train + val, available: dataset.len() });
    }
    let mut ids: Vec<String> = dataset.pairs.iter().map(|p| p.id.clone()).collect();
    let (train_ids, val_ids, _) = split_ids(&mut ids, SplitCounts::new(train, val, 0), seed)?;
    let totals = SyntheticTotals { train: train_ids.len(), val: val_ids.len(), total: train_ids.len() + val_ids.len() };
    Ok((SyntheticSplit { seed, train_ids, val_ids }, totals))
}
