//! Forum exports -> keyword filter -> QA candidates -> cleaned V1 dataset.
//!
//!     cargo run --example build_v1_from_exports

use qaforge::ingest::{keyword_filter, parse_export, thread_to_candidate, KeywordFilterSpec};
use qaforge::model::dataset_stats;
use qaforge::preprocess::build_v1;
use qaforge::source::Source;
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let export = dir.path().join("home-assistant.json");
    let threads = json!([
        {"thread_id": "ha-1", "title": "Zigbee sensor on a guest VLAN?",
         "posts": [{"position": 0, "body": "Can my hub still reach it?"},
                   {"position": 1, "body": "Yes."},
                   {"position": 2, "body": "Yes, allow mDNS between the two VLANs and pin the hub's address."}]},
        {"thread_id": "ha-2", "title": "Favourite dashboard theme",
         "posts": [{"position": 0, "body": "Dark or light?"}, {"position": 1, "body": "Dark."}]},
        {"thread_id": "ha-3", "title": "zigbee sensor on a guest vlan?",
         "posts": [{"position": 0, "body": "Can my hub still reach it?"}, {"position": 1, "body": "Only with mDNS."}]},
        {"thread_id": "ha-4", "title": "Camera firmware nag",
         "posts": [{"position": 0, "body": "It keeps asking to update."}]}
    ]);
    std::fs::write(&export, serde_json::to_string_pretty(&threads)?)?;

    let parsed = parse_export(&export, Source::HomeAssistant)?;
    let matched = keyword_filter(&parsed.threads, &KeywordFilterSpec::default());
    println!("{} threads parsed, {} mention a security keyword", parsed.threads.len(), matched.len());

    let candidates = matched.iter().map(thread_to_candidate).collect::<Result<Vec<_>, _>>()?;
    let (v1, report) = build_v1(&candidates, None);
    println!("reduction: {}", serde_json::to_string(&report)?);
    for pair in &v1.pairs {
        println!("{}\n  Q: {}\n  A: {}", pair.id, pair.question, pair.answer);
    }
    let stats = dataset_stats(&v1)?;
    println!("avg question {:.1} words, avg answer {:.1} words", stats.avg_question_len_words, stats.avg_answer_len_words);
    Ok(())
}
