//! Seeded train/validation/test split and per-source stats of a V3 sample.
//!
//!     cargo run --example dataset_splits

use std::collections::BTreeMap;
use std::path::PathBuf;

use qaforge::model::{dataset_stats, load_dataset, split_dataset, SplitCounts, Version};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/v3_sample.jsonl");
    let dataset = load_dataset(&path, Some(Version::V3))?;
    let stats = dataset_stats(&dataset)?;
    println!("{} pairs, avg question {:.2} words, avg answer {:.2} words",
        stats.total_pairs, stats.avg_question_len_words, stats.avg_answer_len_words);

    let splits = split_dataset(&dataset, SplitCounts::new(144, 36, 20), 0)?;
    let again = split_dataset(&dataset, SplitCounts::new(144, 36, 20), 0)?;
    assert_eq!(splits, again);
    println!("train {} / val {} / test {}", splits.train_ids.len(), splits.val_ids.len(), splits.test_ids.len());

    // How the test split is spread over sources.
    let index = dataset.index();
    let mut per_source: BTreeMap<&str, usize> = BTreeMap::new();
    for id in &splits.test_ids {
        *per_source.entry(index[id.as_str()].source.key()).or_default() += 1;
    }
    for (source, n) in per_source {
        println!("  test {source:<16} {n}");
    }
    Ok(())
}
