//! LDA per source segment with top keywords and UMass coherence.
//!
//!     cargo run --release --example topic_extraction

use std::path::PathBuf;

use qaforge::model::load_dataset;
use qaforge::topics::{default_stopwords, fit_lda, segment_dataset, tokenize_corpus, top_keywords, umass_coherence, LdaConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/v3_sample.jsonl");
    let dataset = load_dataset(&path, None)?;
    let stopwords = default_stopwords();
    let config = LdaConfig { topics: 3, iterations: 200, ..LdaConfig::default() };

    // The three largest sources on their own, the rest pooled.
    for segment in segment_dataset(&dataset, 3)? {
        let corpus = tokenize_corpus(&segment.pairs, &stopwords, 1)?;
        let model = fit_lda(&corpus, &config)?;
        let report = top_keywords(&model, 6)?;
        let coherence = umass_coherence(&model, &corpus, 6)?;
        println!("{} ({} pairs, {} terms)", segment.name, segment.pairs.len(), model.vocabulary.len());
        for (topic, score) in report.topics.iter().zip(&coherence) {
            println!("  topic {} [{score:.2}]: {}", topic.topic_id, topic.top_keywords.join(", "));
        }
    }
    Ok(())
}
