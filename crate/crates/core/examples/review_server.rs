//! Starts the review API on an ephemeral port, lists pending records,
//! decides one over HTTP and shows the progress counters.
//!
//!     cargo run --example review_server            # runs the demo and exits
//!     cargo run --example review_server -- --hold  # keeps serving until Ctrl-C

use std::sync::Arc;

use chrono::Utc;
use serde_json::{json, Value};

use qaforge::refine::{format_qa, Stage};
use qaforge::review::{serve, ReviewState};
use qaforge::store::{RecordStatus, RecordStore, RefinementRecord};

fn record(n: usize) -> RefinementRecord {
    let pair_id = format!("smartthings-{n:05}");
    RefinementRecord {
        id: format!("{pair_id}:rephrase:1"),
        pair_id,
        stage: Stage::Rephrase,
        original: format_qa("hub wont pair lock", "reset the lock first"),
        proposed: format_qa("Why won't my hub pair with the lock?", "Factory-reset the lock, then pair again."),
        status: RecordStatus::Pending,
        final_text: None,
        reviewer_note: None,
        model_name: "demo".into(),
        created_at: Utc::now(),
    }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hold = std::env::args().any(|a| a == "--hold");
    let store = Arc::new(RecordStore::in_memory());
    for n in 1..=3 {
        store.insert(record(n))?;
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}/api", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, ReviewState::new(store), None, async {
        let _ = stopped.await;
    }));

    let http = reqwest::Client::new();
    let page: Value = http.get(format!("{base}/records?status=PENDING")).send().await?.json().await?;
    println!("{} pending", page["total"]);
    let first = page["records"][0]["id"].as_str().unwrap_or_default().to_string();

    let decided = http
        .post(format!("{base}/records/{first}/decision"))
        .json(&json!({"action": "ACCEPT", "expected_status": "PENDING"}))
        .send()
        .await?;
    println!("decide {first}: {}", decided.status());
    let again = http
        .post(format!("{base}/records/{first}/decision"))
        .json(&json!({"action": "REJECT", "expected_status": "PENDING"}))
        .send()
        .await?;
    println!("decide again: {} {}", again.status(), again.text().await?);

    let progress: Value = http.get(format!("{base}/progress")).send().await?.json().await?;
    println!("progress: {progress}");

    if hold {
        println!("serving {base}; Ctrl-C to stop");
        tokio::signal::ctrl_c().await?;
    }
    let _ = stop.send(());
    server.await??;
    Ok(())
}
