//! Command-line front end. Each subcommand maps onto one library operation.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Progress goes to
//! stderr through `log`; machine-readable output goes to files or stdout.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::eval::{
    compare_models, evaluate_predictions, generate_predictions, load_predictions, EvalReport, HttpEmbedder,
    OneHotEmbedder, PredictConfig, PromptMode, TokenEmbedder,
};
use crate::ingest::{keyword_filter, parse_exports, thread_to_candidate, KeywordFilterSpec, MatchField};
use crate::llm::{GenerationParams, HttpChatBackend, LlmClientConfig};
use crate::model::{
    dataset_stats, load_dataset, load_splits, save_dataset, save_splits, split_dataset, Dataset, SplitCounts,
    Version,
};
use crate::preprocess::{build_v1, QACandidate};
use crate::refine::{apply_decisions, fill_synthetic_answers, run_stage, synthetic_split, PromptTemplates, Stage};
use crate::review::{serve, ReviewState};
use crate::source::Source;
use crate::store::RecordStore;
use crate::topics::{
    default_stopwords, fit_lda, parse_word_list, segment_dataset, tokenize_corpus, top_keywords, umass_coherence,
    write_reports_csv, LdaConfig, Segment, RESIDUAL_SEGMENT,
};

/// Settings shared by all subcommands, loaded from `--config` (TOML or
/// JSON). Command-line flags override these values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub llm: LlmClientConfig,
    pub stopwords: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub lda: LdaDefaults,
    pub split: SplitDefaults,
    pub generation: GenerationParams,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus_dir: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub reports_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaDefaults {
    pub topics: usize,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    pub keywords_per_topic: usize,
    pub segments: usize,
    pub min_df: usize,
}

impl Default for LdaDefaults {
    fn default() -> Self {
        let lda = LdaConfig::default();
        LdaDefaults {
            topics: lda.topics,
            alpha: lda.alpha,
            beta: lda.beta,
            iterations: lda.iterations,
            seed: lda.seed,
            keywords_per_topic: 10,
            segments: 12,
            min_df: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitDefaults {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SplitDefaults {
    fn default() -> Self {
        let c = SplitCounts::default();
        SplitDefaults { train: c.train, val: c.val, test: c.test, seed: 0 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "qaforge", version, about = "Build, refine, analyze and evaluate forum-mined QA datasets")]
pub struct Cli {
    /// Pipeline config file (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse forum exports, keep keyword-matching threads, write QA candidates.
    Ingest(IngestArgs),
    /// Clean candidates into a V1 dataset.
    BuildV1(BuildV1Args),
    /// Run one LLM refinement stage and store proposals for review.
    Refine(RefineArgs),
    /// Serve the review API (and optionally a static UI bundle).
    ReviewServe(ReviewServeArgs),
    /// Apply reviewed decisions to produce the next dataset version.
    ApplyReview(ApplyReviewArgs),
    /// Fill human-written answers into synthetic pairs.
    SynthAnswers(SynthAnswersArgs),
    /// Split answered synthetic pairs into train and validation sets.
    SynthSplit(SynthSplitArgs),
    /// Fit LDA per source segment and write topic keywords.
    Topics(TopicsArgs),
    /// Seeded train/validation/test split.
    Split(SplitArgs),
    /// Generate model predictions for one split.
    Predict(PredictArgs),
    /// Score predictions with F1, ROUGE-L and semantic F1.
    Eval(EvalArgs),
    /// Compare evaluation reports side by side.
    Compare(CompareArgs),
    /// Per-source counts and average lengths.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of exports named `<source>.json|csv` or `<source>/*.json|csv`.
    #[arg(long)]
    pub corpus_dir: Option<PathBuf>,
    /// Keyword file, one keyword per line.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Match keywords in the title only.
    #[arg(long)]
    pub title_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildV1Args {
    #[arg(long)]
    pub candidates: PathBuf,
    /// File of thread ids (one per line) chosen during manual selection.
    #[arg(long)]
    pub allowlist: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the reduction report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub stage: Stage,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReviewServeArgs {
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Datasets whose pairs are exposed at /api/pairs/{id}.
    #[arg(long = "dataset")]
    pub datasets: Vec<PathBuf>,
    /// Built review UI to serve at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8000")]
    pub addr: String,
}

#[derive(Debug, Args)]
pub struct ApplyReviewArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// V2, V3 or SYNTHETIC; V3 onto a V3 dataset applies contexts.
    #[arg(long)]
    pub target: Version,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthAnswersArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON object mapping synthetic pair id to answer text.
    #[arg(long)]
    pub answers: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthSplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub train: usize,
    #[arg(long)]
    pub val: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TopicsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub keywords_per_topic: Option<usize>,
    /// Number of largest sources modeled separately; 0 models the whole dataset.
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// TOML file of labels: `[segment]` tables mapping topic id to label.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// `with-context` or `without-context`.
    #[arg(long, default_value = "without-context")]
    pub mode: PromptMode,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Token-embedding service for semantic F1; without it a one-hot
    /// embedder is used, which reduces semantic F1 to exact token matching.
    #[arg(long)]
    pub embedder_url: Option<String>,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-example scores as CSV.
    #[arg(long)]
    pub distribution: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report JSON files written by `eval`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Domain(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(a, &config),
        Command::BuildV1(a) => build_v1_cmd(a),
        Command::Refine(a) => refine(a, &config),
        Command::ReviewServe(a) => review_serve(a, &config),
        Command::ApplyReview(a) => apply_review(a, &config),
        Command::SynthAnswers(a) => synth_answers(a),
        Command::SynthSplit(a) => synth_split(a, &config),
        Command::Topics(a) => topics(a, &config),
        Command::Split(a) => split(a, &config),
        Command::Predict(a) => predict(a, &config),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Stats(a) => stats(a),
    }
}

fn require(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set it in the config file)")))
}

fn existing(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("{} does not exist", path.display())))
    }
}

/// Refuses to overwrite an input; outputs are always new files.
fn distinct_output(out: &Path, inputs: &[&Path]) -> CliResult {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    if out.exists() && inputs.iter().any(|i| canon(i).is_some() && canon(i) == canon(out)) {
        return Err(CliError::Usage(format!("{} is an input; choose a new output file", out.display())));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn export_files(dir: &Path) -> Result<Vec<(PathBuf, Source)>, CliError> {
    let is_export =
        |p: &Path| p.extension().and_then(|e| e.to_str()).is_some_and(|e| matches!(e, "json" | "csv"));
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if path.is_dir() {
            let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
            let source: Source = name.parse()?;
            let mut files: Vec<PathBuf> =
                fs::read_dir(&path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
            files.sort();
            out.extend(files.into_iter().filter(|f| is_export(f)).map(|f| (f, source)));
        } else if is_export(&path) {
            out.push((path.clone(), stem.parse()?));
        }
    }
    if out.is_empty() {
        return Err(CliError::Domain(format!("no .json or .csv exports under {}", dir.display())));
    }
    Ok(out)
}

fn ingest(a: IngestArgs, config: &PipelineConfig) -> CliResult {
    let dir = require(a.corpus_dir, &config.paths.corpus_dir, "corpus-dir")?;
    let fields = if a.title_only { vec![MatchField::Title] } else { vec![MatchField::Title, MatchField::OpeningPost] };
    let spec = match a.keywords.or_else(|| config.keywords.clone()) {
        Some(p) => KeywordFilterSpec::from_keyword_text(&fs::read_to_string(existing(&p)?)?, fields)?,
        None => KeywordFilterSpec::new(KeywordFilterSpec::default().keywords().to_vec(), fields)?,
    };
    let inputs = export_files(existing(&dir)?)?;
    let mut per_source: BTreeMap<Source, (usize, usize)> = BTreeMap::new();
    let mut candidates = Vec::new();
    for ((path, source), parsed) in inputs.iter().zip(parse_exports(&inputs)) {
        let parsed = parsed?;
        for w in &parsed.warnings {
            log::warn!("{}: row {}: {}", w.file, w.row, w.reason);
        }
        let matched = keyword_filter(&parsed.threads, &spec);
        log::info!("{}: {} threads, {} matched", path.display(), parsed.threads.len(), matched.len());
        let entry = per_source.entry(*source).or_default();
        entry.0 += parsed.threads.len();
        entry.1 += matched.len();
        for thread in &matched {
            match thread_to_candidate(thread) {
                Ok(c) => candidates.push(c),
                Err(e) => log::warn!("{e}; skipped"),
            }
        }
    }
    let mut w = BufWriter::new(File::create(&a.out)?);
    for c in &candidates {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("source,threads,matched");
    for (source, (threads, matched)) in &per_source {
        println!("{},{threads},{matched}", source.key());
    }
    Ok(())
}

fn read_candidates(path: &Path) -> Result<Vec<QACandidate>, CliError> {
    let reader = BufReader::new(File::open(existing(path)?)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| CliError::Domain(format!("{}:{}: {e}", path.display(), i + 1)))?,
            );
        }
    }
    Ok(out)
}

fn build_v1_cmd(a: BuildV1Args) -> CliResult {
    let candidates = read_candidates(&a.candidates)?;
    let allowlist: Option<HashSet<String>> = match &a.allowlist {
        Some(p) => Some(parse_word_list_raw(&fs::read_to_string(existing(p)?)?)),
        None => None,
    };
    let (dataset, report) = build_v1(&candidates, allowlist.as_ref());
    distinct_output(&a.out, &[&a.candidates])?;
    save_dataset(&dataset, &a.out)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// Non-empty trimmed lines, `#` comments skipped, case preserved.
fn parse_word_list_raw(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn llm_config(config: &PipelineConfig, base_url: Option<String>, model: Option<String>) -> LlmClientConfig {
    let mut llm = config.llm.clone();
    if let Some(url) = base_url {
        llm.base_url = url;
    }
    if let Some(model) = model {
        llm.model_name = model;
    }
    llm
}

fn refine(a: RefineArgs, config: &PipelineConfig) -> CliResult {
    let records = require(a.records, &config.paths.records, "records")?;
    let dataset = load_dataset(existing(&a.dataset)?, None)?;
    let templates = match a.prompts.or_else(|| config.prompts.clone()) {
        Some(p) => PromptTemplates::load(existing(&p)?)?,
        None => PromptTemplates::default(),
    };
    let mut llm = llm_config(config, a.base_url, a.model);
    if let Some(n) = a.max_concurrency {
        llm.max_concurrency = n;
    }
    let backend = HttpChatBackend::new(&llm)?;
    let store = RecordStore::open(&records)?;
    let run = runtime()?.block_on(run_stage(&dataset, a.stage, &backend, &llm, &templates, &store))?;
    println!(
        "{}",
        serde_json::json!({
            "stage": a.stage,
            "created": run.created.len(),
            "failed": run.failed.len(),
            "skipped": run.skipped,
            "requested": run.requested,
        })
    );
    Ok(())
}

fn review_serve(a: ReviewServeArgs, config: &PipelineConfig) -> CliResult {
    let records = require(a.records, &config.paths.records, "records")?;
    let store = Arc::new(RecordStore::open(&records)?);
    let datasets =
        a.datasets.iter().map(|p| load_dataset(existing(p)?, None).map_err(CliError::from)).collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = &a.static_dir {
        existing(dir)?;
    }
    let state = ReviewState::new(store).with_datasets(&datasets);
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await?;
        eprintln!("review server on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, state, a.static_dir, shutdown).await
    })?;
    Ok(())
}

fn apply_review(a: ApplyReviewArgs, config: &PipelineConfig) -> CliResult {
    let records_path = require(a.records, &config.paths.records, "records")?;
    let dataset = load_dataset(existing(&a.dataset)?, None)?;
    let records = RecordStore::open(existing(&records_path)?)?.snapshot();
    let out = apply_decisions(&dataset, &records, a.target)?;
    distinct_output(&a.out, &[&a.dataset])?;
    save_dataset(&out, &a.out)?;
    println!("{} {} pairs written to {}", out.version, out.len(), a.out.display());
    Ok(())
}

fn synth_answers(a: SynthAnswersArgs) -> CliResult {
    let dataset = load_dataset(existing(&a.dataset)?, Some(Version::Synthetic))?;
    let answers: HashMap<String, String> = serde_json::from_str(&fs::read_to_string(existing(&a.answers)?)?)?;
    let out = fill_synthetic_answers(&dataset, &answers)?;
    distinct_output(&a.out, &[&a.dataset])?;
    save_dataset(&out, &a.out)?;
    let unanswered = out.pairs.iter().filter(|p| p.answer.is_empty()).count();
    println!("{} synthetic pairs, {unanswered} still unanswered", out.len());
    Ok(())
}

fn synth_split(a: SynthSplitArgs, config: &PipelineConfig) -> CliResult {
    let dataset = load_dataset(existing(&a.dataset)?, Some(Version::Synthetic))?;
    let (split, totals) = synthetic_split(&dataset, a.train, a.val, a.seed.unwrap_or(config.split.seed))?;
    write_json(&a.out, &split)?;
    println!("{}", serde_json::to_string(&totals)?);
    Ok(())
}

fn load_labels(path: &Path) -> Result<BTreeMap<String, BTreeMap<usize, String>>, CliError> {
    let raw: BTreeMap<String, BTreeMap<String, String>> = toml::from_str(&fs::read_to_string(path)?)?;
    raw.into_iter()
        .map(|(segment, labels)| {
            let labels = labels
                .into_iter()
                .map(|(id, label)| {
                    id.parse::<usize>()
                        .map(|id| (id, label))
                        .map_err(|_| CliError::Usage(format!("{}: topic id `{id}` is not a number", path.display())))
                })
                .collect::<Result<_, _>>()?;
            Ok((segment, labels))
        })
        .collect()
}

fn topics(a: TopicsArgs, config: &PipelineConfig) -> CliResult {
    let out_dir = require(a.out_dir, &config.paths.reports_dir, "out-dir")?;
    let defaults = &config.lda;
    let lda = LdaConfig {
        topics: a.topics.unwrap_or(defaults.topics),
        alpha: a.alpha.or(defaults.alpha),
        beta: a.beta.unwrap_or(defaults.beta),
        iterations: a.iterations.unwrap_or(defaults.iterations),
        seed: a.seed.unwrap_or(defaults.seed),
    };
    let k = a.keywords_per_topic.unwrap_or(defaults.keywords_per_topic);
    let stopwords = match a.stopwords.or_else(|| config.stopwords.clone()) {
        Some(p) => parse_word_list(&fs::read_to_string(existing(&p)?)?),
        None => default_stopwords(),
    };
    let labels = match &a.labels {
        Some(p) => load_labels(existing(p)?)?,
        None => BTreeMap::new(),
    };
    let dataset = load_dataset(existing(&a.dataset)?, None)?;
    let segments = match a.segments.unwrap_or(defaults.segments) {
        0 => vec![Segment {
            name: "all".into(),
            sources: dataset.pairs.iter().map(|p| p.source).collect::<std::collections::BTreeSet<_>>().into_iter().collect(),
            pairs: dataset.pairs.clone(),
        }],
        n => segment_dataset(&dataset, n)?,
    };
    fs::create_dir_all(&out_dir)?;
    let mut reports = Vec::new();
    let mut coherence = csv::Writer::from_path(out_dir.join("coherence.csv"))?;
    coherence.write_record(["segment", "topic_id", "umass"])?;
    for segment in &segments {
        log::info!("topics: segment {} ({} pairs)", segment.name, segment.pairs.len());
        let corpus = tokenize_corpus(&segment.pairs, &stopwords, defaults.min_df)?;
        let model = fit_lda(&corpus, &lda)?;
        let k = k.min(model.vocabulary.len());
        let mut report = top_keywords(&model, k)?.with_segment(&segment.name);
        if let Some(l) = labels.get(&segment.name) {
            report.apply_labels(l);
        }
        if k >= 2 {
            for (t, score) in umass_coherence(&model, &corpus, k)?.iter().enumerate() {
                coherence.write_record([segment.name.as_str(), &t.to_string(), &format!("{score:.6}")])?;
            }
        }
        reports.push(report);
    }
    coherence.flush()?;
    write_reports_csv(&reports, File::create(out_dir.join("topics.csv"))?)?;
    write_reports_csv(&reports, std::io::stdout().lock())?;
    if segments.iter().any(|s| s.name == RESIDUAL_SEGMENT) {
        log::info!("segment {RESIDUAL_SEGMENT} pools every source outside the largest ones");
    }
    Ok(())
}

fn split(a: SplitArgs, config: &PipelineConfig) -> CliResult {
    let d = config.split;
    let counts = SplitCounts::new(a.train.unwrap_or(d.train), a.val.unwrap_or(d.val), a.test.unwrap_or(d.test));
    let dataset = load_dataset(existing(&a.dataset)?, None)?;
    let splits = split_dataset(&dataset, counts, a.seed.unwrap_or(d.seed))?;
    distinct_output(&a.out, &[&a.dataset])?;
    save_splits(&splits, &a.out)?;
    println!("train {} val {} test {}", splits.train_ids.len(), splits.val_ids.len(), splits.test_ids.len());
    Ok(())
}

fn predict(a: PredictArgs, config: &PipelineConfig) -> CliResult {
    let dataset = load_dataset(existing(&a.dataset)?, None)?;
    let splits = load_splits(existing(&a.splits)?)?;
    let ids = match a.split {
        SplitName::Train => splits.train_ids,
        SplitName::Val => splits.val_ids,
        SplitName::Test => splits.test_ids,
    };
    let llm = llm_config(config, a.base_url, a.model);
    let backend = HttpChatBackend::new(&llm)?;
    let predict_config = PredictConfig {
        model_name: llm.model_name.clone(),
        mode: a.mode,
        params: config.generation,
        max_concurrency: llm.max_concurrency,
        retry: llm.retry.clone(),
    };
    let preds =
        runtime()?.block_on(generate_predictions(&ids, &dataset, &backend, &predict_config, &a.out))?;
    println!("{} predictions in {}", preds.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let dataset = load_dataset(existing(&a.dataset)?, None)?;
    let predictions = load_predictions(existing(&a.predictions)?)?;
    let embedder: Box<dyn TokenEmbedder> = match &a.embedder_url {
        Some(url) => Box::new(HttpEmbedder::new(url.clone())?),
        None => {
            log::warn!("no --embedder-url; semantic F1 uses one-hot token vectors");
            Box::new(OneHotEmbedder::new())
        }
    };
    let report = evaluate_predictions(&predictions, &dataset, embedder.as_ref())?;
    write_json(&a.out, &report)?;
    if let Some(p) = &a.distribution {
        report.write_distribution_csv(File::create(p)?)?;
    }
    println!("{}", serde_json::to_string(&report.means)?);
    Ok(())
}

fn compare(a: CompareArgs) -> CliResult {
    let reports = a
        .reports
        .iter()
        .map(|p| Ok(serde_json::from_str::<EvalReport>(&fs::read_to_string(existing(p)?)?)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let table = compare_models(&reports)?;
    if let Some(p) = &a.csv {
        fs::write(p, table.to_csv()?)?;
    }
    print!("{}", table.to_text());
    Ok(())
}

fn stats(a: StatsArgs) -> CliResult {
    let dataset: Dataset = load_dataset(existing(&a.dataset)?, None)?;
    let report = dataset_stats(&dataset)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("{} pairs ({})", report.total_pairs, dataset.version);
    println!("avg question length (words): {:.2}", report.avg_question_len_words);
    println!("avg answer length (words):   {:.2}", report.avg_answer_len_words);
    for (source, n) in &report.per_source_counts {
        println!("  {:<28} {n}", source.display_name());
    }
    Ok(())
}
