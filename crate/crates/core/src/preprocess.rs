//! Cleaning, longest-answer selection and deduplication into a V1 dataset.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::model::{v1_id, word_count, Dataset, Provenance, QAPair, Version};
use crate::source::Source;

/// One question with every reply from its thread, in post order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QACandidate {
    pub source: Source,
    #[serde(default)]
    pub thread_id: Option<String>,
    pub question: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub input_candidates: usize,
    pub dropped_not_selected: usize,
    pub dropped_empty_question: usize,
    pub dropped_no_answer: usize,
    pub dropped_duplicate: usize,
    pub output_pairs: usize,
}

/// Lowercases, converts CR/CRLF to LF, collapses space/tab runs and trims.
pub fn normalize_text(text: &str) -> String {
    let lowered = text.replace("\r\n", "\n").replace('\r', "\n").to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut in_run = false;
    for ch in lowered.chars() {
        if ch == ' ' || ch == '\t' {
            if !in_run {
                out.push(' ');
            }
            in_run = true;
        } else {
            out.push(ch);
            in_run = false;
        }
    }
    out.trim().to_string()
}

/// Index of the longest answer: most words, then most characters, then the
/// earliest post.
pub fn select_answer_index(candidate: &QACandidate) -> Option<usize> {
    candidate
        .answers
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            (word_count(a), a.chars().count())
                .cmp(&(word_count(b), b.chars().count()))
                // equal lengths: prefer the earlier post
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
}

pub fn select_answer(candidate: &QACandidate) -> Option<&str> {
    select_answer_index(candidate).map(|i| candidate.answers[i].as_str())
}

/// Builds the V1 dataset.
///
/// Each candidate's question and answers are normalized, blank answers are
/// discarded and the longest remaining answer is kept. Candidates whose
/// normalized question repeats an earlier one are dropped. When `allowlist`
/// is given, only candidates whose thread id is listed are considered.
/// Ids are `<source>-<ordinal>`, numbered per source in output order.
pub fn build_v1(
    candidates: &[QACandidate],
    allowlist: Option<&HashSet<String>>,
) -> (Dataset, ReductionReport) {
    let mut report = ReductionReport { input_candidates: candidates.len(), ..Default::default() };
    let mut seen_questions = HashSet::new();
    let mut ordinals: BTreeMap<Source, usize> = BTreeMap::new();
    let mut pairs = Vec::new();

    for candidate in candidates {
        if let Some(allowed) = allowlist {
            let listed = candidate.thread_id.as_ref().is_some_and(|t| allowed.contains(t));
            if !listed {
                report.dropped_not_selected += 1;
                continue;
            }
        }
        let question = normalize_text(&candidate.question);
        if question.is_empty() {
            report.dropped_empty_question += 1;
            continue;
        }
        let cleaned = QACandidate {
            source: candidate.source,
            thread_id: candidate.thread_id.clone(),
            question,
            answers: candidate
                .answers
                .iter()
                .map(|a| normalize_text(a))
                .filter(|a| !a.is_empty())
                .collect(),
        };
        let Some(idx) = select_answer_index(&cleaned) else {
            report.dropped_no_answer += 1;
            continue;
        };
        if !seen_questions.insert(cleaned.question.clone()) {
            report.dropped_duplicate += 1;
            continue;
        }
        let ordinal = ordinals.entry(cleaned.source).or_insert(0);
        *ordinal += 1;
        let QACandidate { source, question, mut answers, .. } = cleaned;
        pairs.push(QAPair {
            id: v1_id(source, *ordinal),
            source,
            question,
            answer: answers.swap_remove(idx),
            version: Version::V1,
            parent_id: None,
            provenance: Provenance::Original,
            context: None,
        });
    }
    report.output_pairs = pairs.len();
    let mut dataset = Dataset::new(Version::V1, pairs);
    dataset.notes = format!(
        "built from {} candidates ({} kept)",
        report.input_candidates, report.output_pairs
    );
    (dataset, report)
}
