//! Scores two models' answers with token F1, ROUGE-L and semantic F1, then
//! prints the comparison table.
//!
//!     cargo run --example evaluate_predictions

use qaforge::eval::{compare_models, evaluate_predictions, relative_improvement, OneHotEmbedder, Prediction, PromptMode};
use qaforge::model::{v1_id, Dataset, Provenance, QAPair, Version};
use qaforge::source::Source;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gold = [
        ("how do i isolate iot devices?", "put them on a separate vlan with no route to the lan"),
        ("should i disable upnp?", "yes, disable upnp on the router and forward ports by hand"),
        ("is wpa3 worth enabling?", "yes if every device supports it, otherwise use mixed mode"),
    ];
    let pairs = gold
        .iter()
        .enumerate()
        .map(|(i, (q, a))| QAPair {
            id: v1_id(Source::Other, i + 1),
            source: Source::Other,
            question: q.to_string(),
            answer: a.to_string(),
            version: Version::V1,
            parent_id: None,
            provenance: Provenance::Original,
            context: None,
        })
        .collect();
    let dataset = Dataset::new(Version::V1, pairs);

    let outputs = [
        ("base", ["use a different network", "disable it", "it depends on your devices"]),
        ("tuned", ["put them on a separate vlan", "yes, disable upnp on the router", "yes if all devices support it"]),
    ];
    let embedder = OneHotEmbedder::new();
    let mut reports = Vec::new();
    for (model, answers) in outputs {
        let predictions: Vec<Prediction> = dataset
            .pairs
            .iter()
            .zip(answers)
            .map(|(pair, output)| Prediction {
                pair_id: pair.id.clone(),
                output: output.into(),
                model_name: model.into(),
                mode: PromptMode::WithoutContext,
            })
            .collect();
        reports.push(evaluate_predictions(&predictions, &dataset, &embedder)?);
    }
    print!("{}", compare_models(&reports)?.to_text());
    let gain = relative_improvement(reports[0].means.f1, reports[1].means.f1)?;
    println!("tuned vs base F1: {gain:+.1}%");
    Ok(())
}
