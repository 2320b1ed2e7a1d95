//! Topic extraction with latent Dirichlet allocation.
//!
//! Inference is collapsed Gibbs sampling: topic-word and document-topic
//! distributions are integrated out and each token's topic is resampled from
//!
//! ```text
//! p(z = k | rest) ∝ (n_dk + α) · (n_kw + β) / (n_k + V·β)
//! ```
//!
//! where the counts exclude the token being resampled. After the last sweep
//! the point estimates are `phi_kw = (n_kw + β) / (n_k + Vβ)` and
//! `theta_dk = (n_dk + α) / (n_d + Kα)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::model::{Dataset, QAPair};
use crate::rng::SplitMix64;
use crate::source::Source;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// The bundled English stopword list.
pub fn default_stopwords() -> Vec<String> {
    parse_word_list(DEFAULT_STOPWORDS)
}

/// One word per line; blank lines and `#` comments are skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or_default().trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowDoc {
    pub doc_id: String,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowCorpus {
    /// Sorted term list; token values index into it.
    pub vocabulary: Vec<String>,
    pub docs: Vec<BowDoc>,
    pub stopwords_applied: Vec<String>,
    pub min_df: usize,
    /// Documents that had no tokens left after filtering.
    pub dropped_docs: Vec<String>,
}

impl BowCorpus {
    pub fn token_count(&self) -> usize {
        self.docs.iter().map(|d| d.tokens.len()).sum()
    }

    /// Number of documents containing each term.
    pub fn document_frequencies(&self) -> Vec<usize> {
        let mut df = vec![0; self.vocabulary.len()];
        for doc in &self.docs {
            let unique: HashSet<usize> = doc.tokens.iter().copied().collect();
            for t in unique {
                df[t] += 1;
            }
        }
        df
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopicError {
    #[error("no documents to model")]
    EmptyInput,
    #[error("every document is empty after filtering")]
    AllDocsEmpty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{topics} topics requested but the corpus has only {tokens} tokens")]
    TooManyTopics { topics: usize, tokens: usize },
    #[error("dataset has {available} sources, fewer than the {requested} requested segments")]
    TooFewSources { requested: usize, available: usize },
    #[error("k = {k} is out of range for a vocabulary of {vocabulary} terms")]
    KeywordCount { k: usize, vocabulary: usize },
}

fn raw_tokens<'a>(text: &'a str, stopwords: &'a HashSet<String>) -> impl Iterator<Item = String> + 'a {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 3)
        .map(str::to_lowercase)
        .filter(move |t| !stopwords.contains(t))
}

/// Turns pairs into a bag-of-words corpus.
///
/// Each document is the question and answer joined by a space, lowercased and
/// split on non-alphanumeric characters. Tokens shorter than three
/// characters, stopwords, and terms found in fewer than `min_df` documents are
/// dropped.
pub fn tokenize_corpus(
    pairs: &[QAPair],
    stopwords: &[String],
    min_df: usize,
) -> Result<BowCorpus, TopicError> {
    if pairs.is_empty() {
        return Err(TopicError::EmptyInput);
    }
    let min_df = min_df.max(1);
    let stopset: HashSet<String> = stopwords.iter().map(|s| s.to_lowercase()).collect();
    let tokenized: Vec<(String, Vec<String>)> = pairs
        .iter()
        .map(|p| {
            let text = format!("{} {}", p.question, p.answer);
            (p.id.clone(), raw_tokens(&text, &stopset).collect())
        })
        .collect();

    let mut df: HashMap<&str, usize> = HashMap::new();
    for (_, toks) in &tokenized {
        let unique: HashSet<&str> = toks.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut vocabulary: Vec<String> =
        df.iter().filter(|(_, &n)| n >= min_df).map(|(t, _)| t.to_string()).collect();
    vocabulary.sort_unstable();
    let index: HashMap<&str, usize> = vocabulary.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

    let mut docs = Vec::new();
    let mut dropped_docs = Vec::new();
    for (doc_id, toks) in &tokenized {
        let tokens: Vec<usize> = toks.iter().filter_map(|t| index.get(t.as_str()).copied()).collect();
        if tokens.is_empty() {
            log::warn!("document {doc_id} is empty after filtering; dropped");
            dropped_docs.push(doc_id.clone());
        } else {
            docs.push(BowDoc { doc_id: doc_id.clone(), tokens });
        }
    }
    if docs.is_empty() {
        return Err(TopicError::AllDocsEmpty);
    }
    let mut stopwords_applied: Vec<String> = stopset.into_iter().collect();
    stopwords_applied.sort_unstable();
    Ok(BowCorpus { vocabulary, docs, stopwords_applied, min_df, dropped_docs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic prior; `None` means `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig { topics: 10, alpha: None, beta: 0.01, iterations: 1000, seed: 0 }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }
}

/// Fitted model. `assignments[d][i]` is the topic of token `i` of document `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub vocabulary: Vec<String>,
    pub doc_ids: Vec<String>,
    /// Topic-word distributions, `topics × |vocabulary|`.
    pub phi: Vec<Vec<f64>>,
    /// Document-topic distributions, `|docs| × topics`.
    pub theta: Vec<Vec<f64>>,
    pub assignments: Vec<Vec<u32>>,
    pub seed: u64,
    pub iterations: usize,
}

/// Sampler counts after a sweep, handed to [`fit_lda_observed`] callbacks.
#[derive(Debug)]
pub struct GibbsState<'a> {
    pub iteration: usize,
    pub topics: usize,
    pub vocab_size: usize,
    /// Row-major `docs × topics`.
    pub doc_topic: &'a [u32],
    /// Row-major `topics × vocab`.
    pub topic_word: &'a [u32],
    pub topic_totals: &'a [u32],
    pub assignments: &'a [Vec<u32>],
}

pub fn fit_lda(corpus: &BowCorpus, config: &LdaConfig) -> Result<TopicModel, TopicError> {
    fit_lda_observed(corpus, config, |_| {})
}

/// [`fit_lda`] with a callback invoked after every full sweep.
pub fn fit_lda_observed(
    corpus: &BowCorpus,
    config: &LdaConfig,
    mut observe: impl FnMut(&GibbsState<'_>),
) -> Result<TopicModel, TopicError> {
    let k = config.topics;
    let alpha = config.alpha();
    let beta = config.beta;
    if k == 0 || config.iterations == 0 {
        return Err(TopicError::Config("topics and iterations must be at least 1".into()));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(TopicError::Config("alpha and beta must be positive".into()));
    }
    if corpus.docs.is_empty() {
        return Err(TopicError::EmptyInput);
    }
    let tokens = corpus.token_count();
    if k > tokens {
        return Err(TopicError::TooManyTopics { topics: k, tokens });
    }
    let v = corpus.vocabulary.len();
    let d = corpus.docs.len();
    let v_beta = v as f64 * beta;

    let mut rng = SplitMix64::new(config.seed);
    let mut doc_topic = vec![0u32; d * k];
    let mut topic_word = vec![0u32; k * v];
    let mut topic_totals = vec![0u32; k];
    let mut assignments: Vec<Vec<u32>> = corpus
        .docs
        .iter()
        .enumerate()
        .map(|(di, doc)| {
            doc.tokens
                .iter()
                .map(|&w| {
                    let z = rng.below(k as u64) as usize;
                    doc_topic[di * k + z] += 1;
                    topic_word[z * v + w] += 1;
                    topic_totals[z] += 1;
                    z as u32
                })
                .collect()
        })
        .collect();

    let mut weights = vec![0f64; k];
    for iteration in 1..=config.iterations {
        for (di, doc) in corpus.docs.iter().enumerate() {
            let dt = &mut doc_topic[di * k..(di + 1) * k];
            for (i, &w) in doc.tokens.iter().enumerate() {
                let old = assignments[di][i] as usize;
                dt[old] -= 1;
                topic_word[old * v + w] -= 1;
                topic_totals[old] -= 1;

                let mut total = 0.0;
                for (t, weight) in weights.iter_mut().enumerate() {
                    total += (dt[t] as f64 + alpha) * (topic_word[t * v + w] as f64 + beta)
                        / (topic_totals[t] as f64 + v_beta);
                    *weight = total;
                }
                let u = rng.next_f64() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                dt[new] += 1;
                topic_word[new * v + w] += 1;
                topic_totals[new] += 1;
                assignments[di][i] = new as u32;
            }
        }
        observe(&GibbsState {
            iteration,
            topics: k,
            vocab_size: v,
            doc_topic: &doc_topic,
            topic_word: &topic_word,
            topic_totals: &topic_totals,
            assignments: &assignments,
        });
    }

    let phi = (0..k)
        .map(|t| {
            let denom = topic_totals[t] as f64 + v_beta;
            (0..v).map(|w| (topic_word[t * v + w] as f64 + beta) / denom).collect()
        })
        .collect();
    let k_alpha = k as f64 * alpha;
    let theta = corpus
        .docs
        .iter()
        .enumerate()
        .map(|(di, doc)| {
            let denom = doc.tokens.len() as f64 + k_alpha;
            (0..k).map(|t| (doc_topic[di * k + t] as f64 + alpha) / denom).collect()
        })
        .collect();

    Ok(TopicModel {
        topics: k,
        alpha,
        beta,
        vocabulary: corpus.vocabulary.clone(),
        doc_ids: corpus.docs.iter().map(|doc| doc.doc_id.clone()).collect(),
        phi,
        theta,
        assignments,
        seed: config.seed,
        iterations: config.iterations,
    })
}

/// A named slice of the dataset modeled on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub sources: Vec<Source>,
    pub pairs: Vec<QAPair>,
}

pub const RESIDUAL_SEGMENT: &str = "combined-small";

/// Splits the dataset into the `top_n` largest sources (by pair count, ties by
/// source key) plus one residual segment holding every other source.
pub fn segment_dataset(dataset: &Dataset, top_n: usize) -> Result<Vec<Segment>, TopicError> {
    let mut by_source: BTreeMap<Source, Vec<QAPair>> = BTreeMap::new();
    for pair in &dataset.pairs {
        by_source.entry(pair.source).or_default().push(pair.clone());
    }
    if by_source.len() < top_n {
        return Err(TopicError::TooFewSources { requested: top_n, available: by_source.len() });
    }
    let mut ranked: Vec<(Source, Vec<QAPair>)> = by_source.into_iter().collect();
    ranked.sort_by(|(sa, a), (sb, b)| b.len().cmp(&a.len()).then_with(|| sa.key().cmp(sb.key())));

    let rest = ranked.split_off(top_n);
    let mut segments: Vec<Segment> = ranked
        .into_iter()
        .map(|(source, pairs)| Segment { name: source.key().to_string(), sources: vec![source], pairs })
        .collect();
    let mut residual = Segment { name: RESIDUAL_SEGMENT.into(), sources: vec![], pairs: vec![] };
    for (source, pairs) in rest {
        residual.sources.push(source);
        residual.pairs.extend(pairs);
    }
    // With exactly `top_n` sources there is nothing left to pool.
    if !residual.pairs.is_empty() {
        segments.push(residual);
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicKeywords {
    pub topic_id: usize,
    pub label: Option<String>,
    pub top_keywords: Vec<String>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub segment: String,
    pub topics: Vec<TopicKeywords>,
}

/// The `k` highest-weight terms of every topic, heaviest first; equal weights
/// are ordered by term.
pub fn top_keywords(model: &TopicModel, k: usize) -> Result<TopicReport, TopicError> {
    let v = model.vocabulary.len();
    if k == 0 || k > v {
        return Err(TopicError::KeywordCount { k, vocabulary: v });
    }
    let topics = model
        .phi
        .iter()
        .enumerate()
        .map(|(topic_id, row)| {
            let mut order: Vec<usize> = (0..v).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then_with(|| model.vocabulary[a].cmp(&model.vocabulary[b])));
            order.truncate(k);
            TopicKeywords {
                topic_id,
                label: None,
                top_keywords: order.iter().map(|&w| model.vocabulary[w].clone()).collect(),
                weights: order.iter().map(|&w| row[w]).collect(),
            }
        })
        .collect();
    Ok(TopicReport { segment: "all".into(), topics })
}

impl TopicReport {
    pub fn with_segment(mut self, segment: impl Into<String>) -> Self {
        self.segment = segment.into();
        self
    }

    /// Attaches human-assigned labels by topic id.
    pub fn apply_labels(&mut self, labels: &BTreeMap<usize, String>) {
        for topic in &mut self.topics {
            if let Some(label) = labels.get(&topic.topic_id) {
                topic.label = Some(label.clone());
            }
        }
    }

    /// `segment,topic_id,label,keywords` rows, keywords joined by `", "`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        write_reports_csv(std::slice::from_ref(self), out)
    }
}

/// Several reports in one CSV with a single header.
pub fn write_reports_csv<W: Write>(reports: &[TopicReport], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["segment", "topic_id", "label", "keywords"])?;
    for report in reports {
        for t in &report.topics {
            writer.write_record([
                report.segment.as_str(),
                &t.topic_id.to_string(),
                t.label.as_deref().unwrap_or(""),
                &t.top_keywords.join(", "),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// UMass coherence of each topic's top-`k` terms:
/// `Σ_{i>j} ln((D(w_i, w_j) + 1) / D(w_j))`, with `w_1` the heaviest term and
/// `D` counting documents.
pub fn umass_coherence(model: &TopicModel, corpus: &BowCorpus, k: usize) -> Result<Vec<f64>, TopicError> {
    if k < 2 {
        return Err(TopicError::KeywordCount { k, vocabulary: model.vocabulary.len() });
    }
    let report = top_keywords(model, k)?;
    let term_index: HashMap<&str, usize> =
        corpus.vocabulary.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let doc_sets: Vec<HashSet<usize>> =
        corpus.docs.iter().map(|doc| doc.tokens.iter().copied().collect()).collect();
    let df = |w: usize| doc_sets.iter().filter(|s| s.contains(&w)).count();
    let co_df = |a: usize, b: usize| doc_sets.iter().filter(|s| s.contains(&a) && s.contains(&b)).count();

    Ok(report
        .topics
        .iter()
        .map(|topic| {
            let ids: Vec<Option<usize>> =
                topic.top_keywords.iter().map(|t| term_index.get(t.as_str()).copied()).collect();
            let mut score = 0.0;
            for i in 1..ids.len() {
                for j in 0..i {
                    let (Some(wi), Some(wj)) = (ids[i], ids[j]) else { continue };
                    let d_j = df(wj);
                    if d_j > 0 {
                        score += ((co_df(wi, wj) + 1) as f64 / d_j as f64).ln();
                    }
                }
            }
            score
        })
        .collect())
}
