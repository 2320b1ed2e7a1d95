//! Helpers shared by the integration and acceptance tests: a stub
//! chat-completions server and synthetic dataset builders.
#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use qaforge::llm::{LlmClientConfig, RetryPolicy};
use qaforge::model::{derived_id, v1_id, Dataset, Provenance, QAPair, Version};
use qaforge::rng::SplitMix64;
use qaforge::source::Source;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// How the stub answers a successful request.
#[derive(Debug, Clone)]
pub enum Reply {
    /// Refinement: echo the pair back in the stage's expected output shape.
    Refine,
    /// Prediction: look the `question:` line up and return its gold answer.
    Echo(HashMap<String, String>),
}

#[derive(Debug, Default)]
pub struct StubLog {
    /// Every request body received, including ones answered with an error.
    pub bodies: Vec<Value>,
    pub injected_failures: usize,
    pub successes: usize,
    attempts: HashMap<u64, u64>,
}

#[derive(Debug)]
pub struct StubState {
    reply: Reply,
    fail_rate: f64,
    pub log: Mutex<StubLog>,
}

impl StubState {
    pub fn requests(&self) -> usize {
        self.log.lock().unwrap().bodies.len()
    }

    pub fn successes(&self) -> usize {
        self.log.lock().unwrap().successes
    }
}

fn hash_of(text: &str) -> u64 {
    let mut h = DefaultHasher::new();
    text.hash(&mut h);
    h.finish()
}

/// The text after the last `label` in `prompt`, up to the next line starting
/// with `stop` (or the end).
fn field_after<'a>(prompt: &'a str, label: &str, stop: Option<&str>) -> &'a str {
    let start = prompt.rfind(label).map(|i| i + label.len()).unwrap_or(0);
    let rest = &prompt[start..];
    let end = stop.and_then(|s| rest.find(s)).unwrap_or(rest.len());
    rest[..end].trim()
}

fn refine_reply(prompt: &str) -> String {
    if prompt.contains("Reply in exactly this format") {
        let q = field_after(prompt, "\nQuestion: ", Some("\nAnswer: "));
        let a = field_after(prompt, "\nAnswer: ", None);
        format!("Question: {q} (rephrased)\nAnswer: {a}")
    } else if prompt.contains("Condense") {
        let a = field_after(prompt, "\nAnswer: ", None);
        a.split_whitespace().take(12).collect::<Vec<_>>().join(" ")
    } else if prompt.contains("Write one new question") {
        let q = field_after(prompt, "\nQuestion: ", Some("\nAnswer: "));
        format!("what else should i check besides: {q}")
    } else {
        let q = field_after(prompt, "\nQuestion: ", Some("\nAnswer: "));
        format!("background for: {q}")
    }
}

async fn chat(State(state): State<Arc<StubState>>, Json(body): Json<Value>) -> Response {
    let prompt = body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string();
    let fail = {
        let mut log = state.log.lock().unwrap();
        log.bodies.push(body.clone());
        let key = hash_of(&prompt);
        let attempt = log.attempts.entry(key).or_insert(0);
        *attempt += 1;
        // Deterministic per (prompt, attempt number).
        let draw = SplitMix64::new(key ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_f64();
        let fail = draw < state.fail_rate;
        if fail {
            log.injected_failures += 1;
        } else {
            log.successes += 1;
        }
        fail
    };
    if fail {
        return (StatusCode::SERVICE_UNAVAILABLE, "try again").into_response();
    }
    let content = match &state.reply {
        Reply::Refine => refine_reply(&prompt),
        Reply::Echo(gold) => {
            let q = field_after(&prompt, "question: ", Some("\nanswer:"));
            gold.get(q).cloned().unwrap_or_default()
        }
    };
    Json(json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    }))
    .into_response()
}

/// Starts the stub on an ephemeral localhost port. Must be called inside a
/// tokio runtime; the server lives as long as the runtime.
pub async fn start_stub(reply: Reply, fail_rate: f64) -> (SocketAddr, Arc<StubState>) {
    let state = Arc::new(StubState { reply, fail_rate, log: Mutex::default() });
    let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, state)
}

pub fn client_config(addr: SocketAddr, max_attempts: u32) -> LlmClientConfig {
    LlmClientConfig {
        base_url: format!("http://{addr}/v1"),
        model_name: "stub-model".into(),
        api_key_ref: "QAFORGE_TEST_UNSET_KEY".into(),
        max_concurrency: 4,
        retry: RetryPolicy { max_attempts, backoff_base_ms: 1 },
        request_timeout_ms: 10_000,
    }
}

/// Per-source selected counts of the original collection, written out here
/// independently of the library's table.
pub const SELECTED: [(&str, usize); 19] = [
    ("smartthings", 500),
    ("home-assistant", 481),
    ("ezlo", 356),
    ("reddit", 285),
    ("avs", 218),
    ("cocoontech", 185),
    ("diynot", 164),
    ("other", 150),
    ("verizon", 145),
    ("level1techs", 140),
    ("whirlpool", 120),
    ("google-nest", 110),
    ("apple-community", 100),
    ("diy-home", 96),
    ("openwrt", 74),
    ("snb", 67),
    ("digital-home", 64),
    ("toms-guide", 38),
    ("stack-exchange", 26),
];

const WORDS: [&str; 16] = [
    "router", "camera", "lock", "vlan", "firmware", "password", "hub", "sensor", "vpn", "alarm", "keypad",
    "update", "isolate", "reset", "guest", "cloud",
];

fn text(rng: &mut SplitMix64, n: usize) -> String {
    (0..n).map(|_| WORDS[rng.below(WORDS.len() as u64) as usize]).collect::<Vec<_>>().join(" ")
}

/// A dataset with the original per-source selected counts (3,319 pairs).
/// Questions are unique; every pair has a context.
pub fn table_shaped_dataset(version: Version, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let mut pairs = Vec::new();
    for (key, n) in SELECTED {
        let source: Source = key.parse().unwrap();
        for i in 1..=n {
            let stem = v1_id(source, i);
            let (id, parent_id) = match version {
                Version::V1 => (stem.clone(), None),
                Version::V2 => (derived_id(&stem, version), Some(stem.clone())),
                _ => (derived_id(&stem, version), Some(derived_id(&stem, Version::V2))),
            };
            pairs.push(QAPair {
                id,
                source,
                question: format!("{} {} {}?", stem, text(&mut rng, 12), text(&mut rng, 6)),
                answer: text(&mut rng, 30),
                version,
                parent_id,
                provenance: Provenance::Original,
                context: Some(text(&mut rng, 20)),
            });
        }
    }
    Dataset::new(version, pairs)
}
