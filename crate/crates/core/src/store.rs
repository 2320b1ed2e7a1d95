//! Append-only JSONL store of refinement records.
//!
//! Every create or decision appends the full record as one line; on open the
//! last line for each id wins. A crash can therefore lose at most a partial
//! trailing line, never an already-persisted decision.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::refine::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordStatus {
    Pending,
    Accepted,
    Edited,
    Rejected,
    /// The model produced no usable proposal; never shown for review.
    Failed,
}

impl RecordStatus {
    pub fn is_decided(self) -> bool {
        matches!(self, RecordStatus::Accepted | RecordStatus::Edited | RecordStatus::Rejected)
    }
}

impl std::str::FromStr for RecordStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_uppercase()))
            .map_err(|_| format!("unknown status `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub id: String,
    pub pair_id: String,
    pub stage: Stage,
    pub original: String,
    pub proposed: String,
    pub status: RecordStatus,
    pub final_text: Option<String>,
    pub reviewer_note: Option<String>,
    pub model_name: String,
    pub created_at: DateTime<Utc>,
}

impl RefinementRecord {
    /// Text the decision settles on: `final_text` for accepted or edited
    /// records, nothing otherwise.
    pub fn decided_text(&self) -> Option<&str> {
        match self.status {
            RecordStatus::Accepted | RecordStatus::Edited => self.final_text.as_deref(),
            _ => None,
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        match self.status {
            RecordStatus::Edited if self.final_text.as_deref().is_none_or(|t| t.trim().is_empty()) => {
                Err("EDITED record requires final_text".into())
            }
            RecordStatus::Accepted if self.final_text.as_deref() != Some(self.proposed.as_str()) => {
                Err("ACCEPTED record must carry the proposed text".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecisionAction {
    Accept,
    Edit,
    Reject,
}

/// A reviewer's verdict on one pending record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub record_id: String,
    pub action: DecisionAction,
    #[serde(default)]
    pub final_text: Option<String>,
    #[serde(default)]
    pub reviewer_note: Option<String>,
    /// Optimistic concurrency token; only `PENDING` records can be decided.
    pub expected_status: RecordStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("record `{0}` not found")]
    NotFound(String),
    #[error("record `{id}` is {current:?}, not PENDING")]
    Conflict { id: String, current: RecordStatus },
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("record `{0}` already exists")]
    DuplicateRecord(String),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Default)]
struct Inner {
    records: Vec<RefinementRecord>,
    by_id: HashMap<String, usize>,
    log: Option<BufWriter<File>>,
}

/// Progress counters for one snapshot of the store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub pending: usize,
    pub accepted: usize,
    pub edited: usize,
    pub rejected: usize,
    pub failed: usize,
    pub total: usize,
}

/// Thread-safe record store. Writes are serialized by an internal lock.
#[derive(Debug)]
pub struct RecordStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl RecordStore {
    pub fn in_memory() -> Self {
        RecordStore { path: None, inner: Mutex::new(Inner::default()) }
    }

    /// Opens (creating if needed) a store backed by a JSONL log at `path`.
    /// A torn final line left by a crash is cut off before appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io { path: path.clone(), source };
        let mut inner = Inner::default();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(io)?;
            let (records, valid_len) = scan_log(&text, &path)?;
            if valid_len < text.len() {
                log::warn!("{}: dropping torn final line", path.display());
                OpenOptions::new().write(true).open(&path).map_err(io)?.set_len(valid_len as u64).map_err(io)?;
            } else if !text.is_empty() && !text.ends_with('\n') {
                OpenOptions::new().append(true).open(&path).map_err(io)?.write_all(b"\n").map_err(io)?;
            }
            for record in records {
                inner.upsert(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        inner.log = Some(BufWriter::new(file));
        Ok(RecordStore { path: Some(path), inner: Mutex::new(inner) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Persists a brand-new record.
    pub fn insert(&self, record: RefinementRecord) -> Result<(), StoreError> {
        let mut inner = self.lock();
        if inner.by_id.contains_key(&record.id) {
            return Err(StoreError::DuplicateRecord(record.id));
        }
        self.persist(&mut inner, &record, false)?;
        inner.upsert(record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<RefinementRecord> {
        let inner = self.lock();
        inner.by_id.get(id).map(|&i| inner.records[i].clone())
    }

    pub fn snapshot(&self) -> Vec<RefinementRecord> {
        self.lock().records.clone()
    }

    pub fn for_stage(&self, stage: Stage) -> Vec<RefinementRecord> {
        self.lock().records.iter().filter(|r| r.stage == stage).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies a decision atomically. Fails with `Conflict` unless the record
    /// is still `PENDING`.
    pub fn decide(&self, decision: &Decision) -> Result<RefinementRecord, StoreError> {
        if decision.expected_status != RecordStatus::Pending {
            return Err(StoreError::InvalidDecision("expected_status must be PENDING".into()));
        }
        let final_text = match (decision.action, &decision.final_text) {
            (DecisionAction::Edit, Some(t)) if !t.trim().is_empty() => Some(t.clone()),
            (DecisionAction::Edit, _) => {
                return Err(StoreError::InvalidDecision("EDIT requires a non-empty final_text".into()))
            }
            (_, Some(_)) => {
                return Err(StoreError::InvalidDecision("final_text is only allowed with EDIT".into()))
            }
            (_, None) => None,
        };

        let mut inner = self.lock();
        let idx = *inner
            .by_id
            .get(&decision.record_id)
            .ok_or_else(|| StoreError::NotFound(decision.record_id.clone()))?;
        let current = &inner.records[idx];
        if current.status != decision.expected_status {
            return Err(StoreError::Conflict { id: current.id.clone(), current: current.status });
        }
        let mut updated = current.clone();
        match decision.action {
            DecisionAction::Accept => {
                updated.status = RecordStatus::Accepted;
                updated.final_text = Some(updated.proposed.clone());
            }
            DecisionAction::Edit => {
                updated.status = RecordStatus::Edited;
                updated.final_text = final_text;
            }
            DecisionAction::Reject => {
                updated.status = RecordStatus::Rejected;
                updated.final_text = None;
            }
        }
        updated.reviewer_note = decision.reviewer_note.clone();
        self.persist(&mut inner, &updated, true)?;
        inner.records[idx] = updated.clone();
        Ok(updated)
    }

    pub fn progress(&self, stage: Option<Stage>) -> Progress {
        progress_of(self.lock().records.iter().filter(|r| stage.is_none_or(|s| r.stage == s)))
    }

    /// Rewrites the log with one line per record via a temp file and rename.
    pub fn compact(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else { return Ok(()) };
        let io = |source| StoreError::Io { path: path.clone(), source };
        let mut inner = self.lock();
        if let Some(log) = inner.log.as_mut() {
            log.flush().map_err(io)?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp).map_err(io)?);
            for r in &inner.records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n").map_err(io)?;
            }
            out.flush().map_err(io)?;
            out.get_ref().sync_all().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(io)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io)?;
        inner.log = Some(BufWriter::new(file));
        Ok(())
    }

    fn persist(&self, inner: &mut Inner, record: &RefinementRecord, durable: bool) -> Result<(), StoreError> {
        let (Some(path), Some(log)) = (&self.path, inner.log.as_mut()) else { return Ok(()) };
        let io = |source| StoreError::Io { path: path.clone(), source };
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        log.write_all(&line).map_err(io)?;
        log.flush().map_err(io)?;
        if durable {
            log.get_ref().sync_data().map_err(io)?;
        }
        Ok(())
    }
}

impl Inner {
    fn upsert(&mut self, record: RefinementRecord) {
        match self.by_id.get(&record.id) {
            Some(&i) => self.records[i] = record,
            None => {
                self.by_id.insert(record.id.clone(), self.records.len());
                self.records.push(record);
            }
        }
    }
}

pub(crate) fn progress_of<'a>(records: impl Iterator<Item = &'a RefinementRecord>) -> Progress {
    let mut p = Progress::default();
    for r in records {
        match r.status {
            RecordStatus::Pending => p.pending += 1,
            RecordStatus::Accepted => p.accepted += 1,
            RecordStatus::Edited => p.edited += 1,
            RecordStatus::Rejected => p.rejected += 1,
            RecordStatus::Failed => p.failed += 1,
        }
        p.total += 1;
    }
    p
}

/// Reads every record line of a log, in file order (later lines supersede
/// earlier lines with the same id).
pub fn read_log(path: &Path) -> Result<Vec<RefinementRecord>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.into(), source })?;
    Ok(scan_log(&text, path)?.0)
}

/// Parses log text; returns the records and the byte length of the intact
/// prefix. Only the final line may be malformed (a torn write).
fn scan_log(text: &str, path: &Path) -> Result<(Vec<RefinementRecord>, usize), StoreError> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n').enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        let is_last = lines.peek().is_none();
        if !line.trim().is_empty() {
            match serde_json::from_str(line.trim_end()) {
                Ok(r) => out.push(r),
                Err(_) if is_last => return Ok((out, offset)),
                Err(e) => {
                    return Err(StoreError::Malformed { path: path.into(), line: i + 1, message: e.to_string() })
                }
            }
        }
        offset += line.len();
    }
    Ok((out, offset))
}
