//! One refinement stage end to end with an in-process model: proposals are
//! stored as PENDING records, reviewed, then applied to produce V2.
//!
//!     cargo run --example refine_with_stub_llm

use std::future::Future;

use qaforge::llm::{ChatBackend, ChatRequest, LlmClientConfig, LlmError};
use qaforge::model::{v1_id, verify_lineage, Dataset, Provenance, QAPair, Version};
use qaforge::refine::{apply_decisions, run_stage, PromptTemplates, Stage};
use qaforge::source::Source;
use qaforge::store::{Decision, DecisionAction, RecordStatus, RecordStore};

/// Tidies the question it is shown and keeps the answer.
struct Tidy;

impl ChatBackend for Tidy {
    fn complete(&self, request: &ChatRequest) -> impl Future<Output = Result<String, LlmError>> + Send {
        let prompt = request.messages.last().map(|m| m.content.clone()).unwrap_or_default();
        async move {
            let q_at = prompt.rfind("\nQuestion: ").ok_or_else(|| LlmError::Fatal("no question".into()))?;
            let rest = &prompt[q_at + "\nQuestion: ".len()..];
            let (q, a) = rest.split_once("\nAnswer: ").unwrap_or((rest, ""));
            let q = q.trim().trim_end_matches('?');
            Ok(format!("Question: How do I {q}?\nAnswer: {}", a.trim()))
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = ["stop my camera phoning home", "put the smart tv on its own network", "rotate the hub password"]
        .iter()
        .enumerate()
        .map(|(i, q)| QAPair {
            id: v1_id(Source::Reddit, i + 1),
            source: Source::Reddit,
            question: format!("{q}?"),
            answer: "block it at the router and check the logs".into(),
            version: Version::V1,
            parent_id: None,
            provenance: Provenance::Original,
            context: None,
        })
        .collect();
    let v1 = Dataset::new(Version::V1, pairs);

    let store = RecordStore::in_memory();
    let config = LlmClientConfig { model_name: "tidy".into(), ..LlmClientConfig::default() };
    let rt = tokio::runtime::Runtime::new()?;
    let run = rt.block_on(run_stage(&v1, Stage::Rephrase, &Tidy, &config, &PromptTemplates::default(), &store))?;
    println!("{} proposals, {} failed", run.created.len(), run.failed.len());

    // A reviewer accepts the first, edits the second and rejects the third.
    for (i, record) in store.for_stage(Stage::Rephrase).iter().enumerate() {
        let (action, final_text) = match i {
            0 => (DecisionAction::Accept, None),
            1 => (DecisionAction::Edit, Some("Question: How do I isolate a smart TV?\nAnswer: Give it a separate VLAN.".into())),
            _ => (DecisionAction::Reject, None),
        };
        store.decide(&Decision {
            record_id: record.id.clone(),
            action,
            final_text,
            reviewer_note: None,
            expected_status: RecordStatus::Pending,
        })?;
    }
    println!("progress: {:?}", store.progress(Some(Stage::Rephrase)));

    // The rejected pair carries over unchanged.
    let v2 = apply_decisions(&v1, &store.snapshot(), Version::V2)?;
    verify_lineage(&v2, &[&v1])?;
    for pair in &v2.pairs {
        println!("{} <- {}\n  Q: {}\n  A: {}", pair.id, pair.parent_id.as_deref().unwrap_or("-"), pair.question, pair.answer);
    }
    Ok(())
}
