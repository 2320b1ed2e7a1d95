//! Forum export parsing and keyword filtering.
//!
//! Two export layouts are accepted, chosen by file extension:
//!
//! * `.json`: an array of threads,
//!   `{"thread_id", "title", "posts": [{"position", "body", "meta"?, ...}]}`.
//!   Post keys other than `position` and `body` are folded into `meta`.
//! * `.csv`: one row per post with a header containing `thread_id`,
//!   `position`, `title` and `body`, plus an optional `meta` column holding a
//!   JSON object. The thread title is taken from the lowest-position row that
//!   has one.
//!
//! Rows that cannot be used are skipped and reported as [`ParseWarning`]s.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::preprocess::QACandidate;
use crate::source::Source;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub position: u32,
    pub body: String,
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawThread {
    pub source: Source,
    pub thread_id: String,
    pub title: String,
    pub posts: Vec<Post>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub file: String,
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedExport {
    pub threads: Vec<RawThread>,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchField {
    Title,
    OpeningPost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordFilterSpec {
    keywords: Vec<String>,
    match_fields: Vec<MatchField>,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unsupported export format for {0} (expected .json or .csv)")]
    UnknownFormat(PathBuf),
    #[error("{path}: {message}")]
    Unparseable { path: PathBuf, message: String },
    #[error("{0}: no parseable threads")]
    NoThreads(PathBuf),
    #[error("keyword list is empty")]
    NoKeywords,
    #[error("keyword `{0}` is not lowercase")]
    KeywordCase(String),
    #[error("no match fields selected")]
    NoMatchFields,
    #[error("thread `{0}` has no posts")]
    EmptyThread(String),
    #[error("thread `{0}` has neither a title nor an opening post body")]
    EmptyQuestion(String),
}

const DEFAULT_KEYWORDS: &str = include_str!("../data/keywords.txt");

impl KeywordFilterSpec {
    pub fn new(keywords: Vec<String>, match_fields: Vec<MatchField>) -> Result<Self, IngestError> {
        let keywords: Vec<String> =
            keywords.into_iter().map(|k| k.trim().to_string()).filter(|k| !k.is_empty()).collect();
        if keywords.is_empty() {
            return Err(IngestError::NoKeywords);
        }
        if let Some(k) = keywords.iter().find(|k| k.to_lowercase() != **k) {
            return Err(IngestError::KeywordCase(k.clone()));
        }
        if match_fields.is_empty() {
            return Err(IngestError::NoMatchFields);
        }
        Ok(KeywordFilterSpec { keywords, match_fields })
    }

    /// Parses a keyword file: one phrase per line, `#` starts a comment.
    pub fn from_keyword_text(text: &str, match_fields: Vec<MatchField>) -> Result<Self, IngestError> {
        let keywords = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or_default().trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::new(keywords, match_fields)
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn match_fields(&self) -> &[MatchField] {
        &self.match_fields
    }

    fn matches(&self, thread: &RawThread) -> bool {
        self.match_fields.iter().any(|field| {
            let text = match field {
                MatchField::Title => thread.title.to_lowercase(),
                MatchField::OpeningPost => {
                    thread.posts.first().map(|p| p.body.to_lowercase()).unwrap_or_default()
                }
            };
            self.keywords.iter().any(|k| text.contains(k.as_str()))
        })
    }
}

impl Default for KeywordFilterSpec {
    fn default() -> Self {
        Self::from_keyword_text(DEFAULT_KEYWORDS, vec![MatchField::Title, MatchField::OpeningPost])
            .expect("bundled keyword list is valid")
    }
}

/// Parses one export file, dispatching on its extension.
pub fn parse_export(path: impl AsRef<Path>, source: Source) -> Result<ParsedExport, IngestError> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let parsed = match ext.as_deref() {
        Some("json") => {
            let text = read(path)?;
            parse_json(&text, &display(path), source)
                .map_err(|message| IngestError::Unparseable { path: path.into(), message })?
        }
        Some("csv") => {
            let text = read(path)?;
            parse_csv(&text, &display(path), source)
                .map_err(|message| IngestError::Unparseable { path: path.into(), message })?
        }
        _ => return Err(IngestError::UnknownFormat(path.into())),
    };
    if parsed.threads.is_empty() {
        return Err(IngestError::NoThreads(path.into()));
    }
    Ok(parsed)
}

/// Parses several exports, one worker thread per file. Results keep input order.
pub fn parse_exports(
    inputs: &[(PathBuf, Source)],
) -> Vec<Result<ParsedExport, IngestError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .iter()
            .map(|(path, source)| scope.spawn(move || parse_export(path, *source)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("parser thread panicked")).collect()
    })
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.into(), source })
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn parse_json(text: &str, file: &str, source: Source) -> Result<ParsedExport, String> {
    let items: Vec<Value> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut out = ParsedExport::default();
    for (idx, item) in items.into_iter().enumerate() {
        let mut warn = |reason: String| {
            out.warnings.push(ParseWarning { file: file.to_string(), row: idx, reason })
        };
        let Value::Object(mut obj) = item else {
            warn("thread is not an object".into());
            continue;
        };
        let Some(thread_id) = obj.remove("thread_id").and_then(id_string) else {
            warn("missing thread_id".into());
            continue;
        };
        let title = match obj.remove("title") {
            Some(Value::String(s)) => s,
            None | Some(Value::Null) => String::new(),
            Some(_) => {
                warn(format!("thread {thread_id}: title is not a string"));
                continue;
            }
        };
        let Some(Value::Array(raw_posts)) = obj.remove("posts") else {
            warn(format!("thread {thread_id}: missing posts array"));
            continue;
        };
        let mut posts = Vec::with_capacity(raw_posts.len());
        for (pidx, raw) in raw_posts.into_iter().enumerate() {
            match json_post(raw) {
                Ok(post) => posts.push(post),
                Err(reason) => warn(format!("thread {thread_id}, post {pidx}: {reason}")),
            }
        }
        if posts.is_empty() {
            warn(format!("thread {thread_id}: no usable posts"));
            continue;
        }
        posts.sort_by_key(|p| p.position);
        out.threads.push(RawThread { source, thread_id, title, posts });
    }
    Ok(out)
}

fn id_string(v: Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Some(s),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn json_post(raw: Value) -> Result<Post, String> {
    let Value::Object(mut obj) = raw else {
        return Err("post is not an object".into());
    };
    let position = obj
        .remove("position")
        .and_then(|v| v.as_u64())
        .and_then(|p| u32::try_from(p).ok())
        .ok_or("missing or invalid position")?;
    let body = match obj.remove("body") {
        Some(Value::String(s)) => s,
        _ => return Err("missing body".into()),
    };
    let mut meta: BTreeMap<String, Value> = match obj.remove("meta") {
        Some(Value::Object(m)) => m.into_iter().collect(),
        _ => BTreeMap::new(),
    };
    meta.extend(obj);
    Ok(Post { position, body, meta })
}

fn parse_csv(text: &str, file: &str, source: Source) -> Result<ParsedExport, String> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let (Some(c_tid), Some(c_pos), Some(c_title), Some(c_body)) =
        (col("thread_id"), col("position"), col("title"), col("body"))
    else {
        return Err("CSV header must contain thread_id, position, title and body".into());
    };
    let c_meta = col("meta");

    let mut out = ParsedExport::default();
    // thread_id -> (first-seen order, title candidates by position, posts)
    let mut threads: HashMap<String, (usize, Vec<(u32, String)>, Vec<Post>)> = HashMap::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
                out.warnings.push(ParseWarning { file: file.into(), row, reason: e.to_string() });
                continue;
            }
        };
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut warn =
            |reason: &str| out.warnings.push(ParseWarning { file: file.into(), row, reason: reason.into() });
        let thread_id = record.get(c_tid).unwrap_or("").trim();
        if thread_id.is_empty() {
            warn("missing thread_id");
            continue;
        }
        let Some(position) = record.get(c_pos).and_then(|p| p.trim().parse::<u32>().ok()) else {
            warn("missing or invalid position");
            continue;
        };
        let Some(body) = record.get(c_body) else {
            warn("missing body");
            continue;
        };
        let meta = match c_meta.and_then(|c| record.get(c)).map(str::trim) {
            None | Some("") => BTreeMap::new(),
            Some(raw) => match serde_json::from_str::<Map<String, Value>>(raw) {
                Ok(m) => m.into_iter().collect(),
                Err(_) => {
                    warn("meta is not a JSON object");
                    continue;
                }
            },
        };
        let order = threads.len();
        let entry = threads.entry(thread_id.to_string()).or_insert_with(|| (order, vec![], vec![]));
        let title = record.get(c_title).unwrap_or("").trim();
        if !title.is_empty() {
            entry.1.push((position, title.to_string()));
        }
        entry.2.push(Post { position, body: body.to_string(), meta });
    }

    let mut collected: Vec<_> = threads.into_iter().collect();
    collected.sort_by_key(|(_, (order, _, _))| *order);
    for (thread_id, (_, mut titles, mut posts)) in collected {
        posts.sort_by_key(|p| p.position);
        titles.sort_by_key(|(pos, _)| *pos);
        let title = titles.into_iter().next().map(|(_, t)| t).unwrap_or_default();
        out.threads.push(RawThread { source, thread_id, title, posts });
    }
    Ok(out)
}

/// Keeps threads where any keyword occurs (case-insensitive substring) in a
/// selected field. Input order is preserved.
pub fn keyword_filter(threads: &[RawThread], spec: &KeywordFilterSpec) -> Vec<RawThread> {
    threads.iter().filter(|t| spec.matches(t)).cloned().collect()
}

/// Turns a thread into one question with every reply as a candidate answer.
///
/// The question is the title and the opening post joined by a blank line;
/// metadata is not carried over.
pub fn thread_to_candidate(thread: &RawThread) -> Result<QACandidate, IngestError> {
    let (opening, replies) =
        thread.posts.split_first().ok_or_else(|| IngestError::EmptyThread(thread.thread_id.clone()))?;
    let title = thread.title.trim();
    let body = opening.body.trim();
    let question = match (title.is_empty(), body.is_empty()) {
        (true, true) => return Err(IngestError::EmptyQuestion(thread.thread_id.clone())),
        (false, true) => title.to_string(),
        (true, false) => body.to_string(),
        (false, false) => format!("{title}\n\n{body}"),
    };
    Ok(QACandidate {
        source: thread.source,
        thread_id: Some(thread.thread_id.clone()),
        question,
        answers: replies.iter().map(|p| p.body.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thread(title: &str, bodies: &[&str]) -> RawThread {
        RawThread {
            source: Source::Reddit,
            thread_id: title.to_string(),
            title: title.to_string(),
            posts: bodies
                .iter()
                .enumerate()
                .map(|(i, b)| Post { position: i as u32, body: b.to_string(), meta: BTreeMap::new() })
                .collect(),
        }
    }

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn json_export_sorted_and_meta_folded() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "t.json",
            r#"[
              {"thread_id": "a", "title": "Cam hacked?", "posts": [
                 {"position": 2, "body": "second", "votes": 3},
                 {"position": 0, "body": "opening", "meta": {"author": "x"}},
                 {"position": 1, "body": "first"}]},
              {"thread_id": 7, "title": "VPN", "posts": [
                 {"position": 1, "body": "b"}, {"position": 0, "body": "a"}, {"position": 2, "body": "c"}]}
            ]"#,
        );
        let parsed = parse_export(&p, Source::Reddit).unwrap();
        assert_eq!(parsed.threads.len(), 2);
        assert!(parsed.warnings.is_empty());
        let t = &parsed.threads[0];
        assert_eq!(t.posts.iter().map(|p| p.position).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(t.posts[0].meta["author"], "x");
        assert_eq!(t.posts[2].meta["votes"], 3);
        assert_eq!(parsed.threads[1].thread_id, "7");
    }

    #[test]
    fn csv_rows_resorted_and_bad_rows_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "t.csv",
            "thread_id,position,title,body,meta\n\
             t1,2,,\"third, with comma\",\n\
             t1,0,Door lock,opening,\"{\"\"votes\"\": 2}\"\n\
             t1,x,,broken,\n\
             t1,1,,second,\n",
        );
        let parsed = parse_export(&p, Source::Ezlo).unwrap();
        assert_eq!(parsed.threads.len(), 1);
        let t = &parsed.threads[0];
        assert_eq!(t.title, "Door lock");
        assert_eq!(
            t.posts.iter().map(|p| p.body.as_str()).collect::<Vec<_>>(),
            vec!["opening", "second", "third, with comma"]
        );
        assert_eq!(parsed.warnings.len(), 1);
        assert_eq!(parsed.warnings[0].row, 4);
    }

    #[test]
    fn format_and_emptiness_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.html", "<html>");
        assert!(matches!(parse_export(&p, Source::Snb), Err(IngestError::UnknownFormat(_))));
        let p = write(&dir, "t.json", "[]");
        assert!(matches!(parse_export(&p, Source::Snb), Err(IngestError::NoThreads(_))));
        let p = write(&dir, "t2.json", "{not json");
        assert!(matches!(parse_export(&p, Source::Snb), Err(IngestError::Unparseable { .. })));
        assert!(matches!(
            parse_export(dir.path().join("missing.csv"), Source::Snb),
            Err(IngestError::Io { .. })
        ));
    }

    #[test]
    fn keyword_filter_examples() {
        let spec = KeywordFilterSpec::new(vec!["vpn".into()], vec![MatchField::Title]).unwrap();
        let kept = thread("Setting up VPN on router", &["q"]);
        let dropped = thread("garden lighting", &["q"]);
        let out = keyword_filter(&[kept.clone(), dropped], &spec);
        assert_eq!(out, vec![kept]);
    }

    #[test]
    fn keyword_spec_validation() {
        assert!(matches!(KeywordFilterSpec::new(vec![], vec![MatchField::Title]), Err(IngestError::NoKeywords)));
        assert!(matches!(
            KeywordFilterSpec::new(vec!["VPN".into()], vec![MatchField::Title]),
            Err(IngestError::KeywordCase(_))
        ));
        assert!(matches!(KeywordFilterSpec::new(vec!["vpn".into()], vec![]), Err(IngestError::NoMatchFields)));
        let default = KeywordFilterSpec::default();
        assert!(default.keywords().iter().any(|k| k == "vlan"));
    }

    #[test]
    fn opening_post_field_only() {
        let spec = KeywordFilterSpec::new(vec!["firmware".into()], vec![MatchField::OpeningPost]).unwrap();
        let t = thread("Hub question", &["Is the FIRMWARE signed?", "yes"]);
        let reply_only = thread("Hub question", &["hello", "update firmware"]);
        assert_eq!(keyword_filter(&[t.clone(), reply_only], &spec), vec![t]);
    }

    #[test]
    fn candidate_shapes() {
        let c = thread_to_candidate(&thread("Only a question", &["body"])).unwrap();
        assert_eq!(c.question, "Only a question\n\nbody");
        assert!(c.answers.is_empty());
        let c = thread_to_candidate(&thread("T", &["q", "a1", "a2", "a3"])).unwrap();
        assert_eq!(c.answers, vec!["a1", "a2", "a3"]);
        assert!(matches!(thread_to_candidate(&thread("", &[" "])), Err(IngestError::EmptyQuestion(_))));
        assert!(matches!(thread_to_candidate(&thread("x", &[])), Err(IngestError::EmptyThread(_))));
    }
}
