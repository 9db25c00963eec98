//! Command-line front end.
//!
//! Exit codes: 0 success, 2 validation, I/O or usage error, 3 provider error.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::embed::{
    CachedProvider, EmbedError, EmbeddingCache, EmbeddingSource, HttpEmbeddingProvider, PairTable, RetryPolicy,
    SimilarityEnsemble, SimilaritySource, DEFAULT_MODELS, ENV_EMBED_CACHE, ENV_EMBED_MODELS, ENV_EMBED_URL,
};
use crate::model::{load_corpus, report_to_json, sequence_to_json, AttributeKind, PatientSequence, Strictness};
use crate::perturb::{run_sensitivity, write_csv, AntonymMap, PerturbError, Perturbation, PerturbationKind};
use crate::score::{AttributeWeights, Counts, ScoreBreakdown, ScoreConfig, ScoreError, Scorer, Summary};
use crate::structure::{
    CompletionProvider, Example, FewShotIndex, HttpCompletionProvider, PatientRun, Pipeline, PromptOptions,
    RateLimited, RateLimiter, RepairOptions, ReportInput, ScriptedProvider, StructureError, Transcript, ENV_LLM_MODEL,
    ENV_LLM_URL,
};
use crate::vocab::{load_vocabulary, match_spans, SpanMatch, Vocabulary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Sequential,
}

#[derive(Debug, Parser)]
#[command(name = "lunguage", version, about = "Structure and score radiology reports")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON map of attribute weight overrides, e.g. {"location": 0.3}
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    /// Embedding service base URL; without it a seeded deterministic encoder is used
    #[arg(long, global = true, env = ENV_EMBED_URL)]
    pub embed_url: Option<String>,
    /// Comma-separated encoder names sent to the embedding service
    #[arg(long, global = true, env = ENV_EMBED_MODELS, value_delimiter = ',')]
    pub embed_models: Vec<String>,
    /// Width of the deterministic encoder
    #[arg(long, global = true, default_value_t = 256)]
    pub embed_dim: usize,
    /// Fixed pairwise similarities ([{"a", "b", "score"}]) instead of an encoder
    #[arg(long, global = true)]
    pub similarity_table: Option<PathBuf>,
    /// Completion service base URL
    #[arg(long, global = true, env = ENV_LLM_URL)]
    pub llm_url: Option<String>,
    #[arg(long, global = true, env = ENV_LLM_MODEL)]
    pub llm_model: Option<String>,
    /// Scripted completion transcript (prompt hash -> response)
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    /// Embedding cache file, loaded at start and saved at exit
    #[arg(long, global = true, env = ENV_EMBED_CACHE)]
    pub cache: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output format (default: from the --out extension, else per command)
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Skip invalid corpus entries instead of failing
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Pairs scoring at or below this value are never matched
    #[arg(long, global = true, default_value_t = 0.0)]
    pub threshold: f64,
    /// Retries for transient provider failures
    #[arg(long, global = true, default_value_t = 3)]
    pub retries: u32,
    /// Per-request provider timeout in seconds
    #[arg(long, global = true, default_value_t = 30.0)]
    pub timeout: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predicted structured reports against references
    Score(ScoreArgs),
    /// Structure free-text reports with a completion provider
    Structure(StructureArgs),
    /// List vocabulary span matches in text
    MatchVocab(MatchVocabArgs),
    /// Perturb reference data and report Effect Rates
    Perturb(PerturbArgs),
    /// Validate a structured corpus
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Single)]
    pub mode: Mode,
    /// Score ungrouped findings on their phrase instead of failing
    #[arg(long)]
    pub allow_ungrouped: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StructureArgs {
    /// JSONL of {patient_id?, study_id, study_day, sections}
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Structured reports with source_text, used as few-shot examples
    #[arg(long)]
    pub examples: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub shots: usize,
    #[arg(long)]
    pub max_example_tokens: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub max_repairs: u32,
    /// Also group findings across each patient's studies
    #[arg(long)]
    pub sequential: bool,
    /// Completion requests per second across all workers
    #[arg(long)]
    pub rate_limit: Option<f64>,
    /// Write every provider exchange as JSONL
    #[arg(long)]
    pub log_transcripts: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchVocabArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// Text to match
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub text: Option<String>,
    /// Plain-text file, or .jsonl of raw reports
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long, value_parser = clap::value_parser!(PerturbationKind))]
    pub kind: PerturbationKind,
    /// Reference corpus
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Attribute for edit-attribute
    #[arg(long)]
    pub attribute: Option<String>,
    /// New value for edit-attribute, entity text for insert-finding
    #[arg(long)]
    pub value: Option<String>,
    /// Additional antonym pairs ([["a", "b"], ...])
    #[arg(long)]
    pub antonyms: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl clap::ValueEnum for PerturbationKind {
    fn value_variants<'a>() -> &'a [Self] {
        &PerturbationKind::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// JSONL file or directory of .json files
    #[arg(long = "in")]
    pub input: PathBuf,
}

/// Resolved settings, written into every output artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub embedding: Value,
    pub completion: Value,
    pub score: ScoreConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structure: Option<Value>,
    pub cache: Option<PathBuf>,
    pub format: Format,
    pub strictness: &'static str,
    pub jobs: Option<usize>,
    pub seed: u64,
}

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Provider(_) => EXIT_PROVIDER,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Provider(m) => m,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{}: {e}", path.display()))
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Config(_) | EmbedError::Cache { .. } => CliError::Invalid(e.to_string()),
            _ => CliError::Provider(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Embed(inner) => inner.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<StructureError> for CliError {
    fn from(e: StructureError) -> Self {
        if e.is_provider_error() {
            CliError::Provider(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<PerturbError> for CliError {
    fn from(e: PerturbError) -> Self {
        match e {
            PerturbError::Score(s) => s.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(invalid)?;
    pool.install(|| match &cli.command {
        Command::Score(a) => cmd_score(&cli.global, a),
        Command::Structure(a) => cmd_structure(&cli.global, a),
        Command::MatchVocab(a) => cmd_match_vocab(&cli.global, a),
        Command::Perturb(a) => cmd_perturb(&cli.global, a),
        Command::Validate(a) => cmd_validate(&cli.global, a),
    })
}

fn resolve_format(g: &GlobalArgs, out: Option<&Path>, default: Format) -> Format {
    g.format
        .or_else(|| match out?.extension()?.to_str()? {
            "json" => Some(Format::Json),
            "jsonl" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        })
        .unwrap_or(default)
}

fn strictness(g: &GlobalArgs) -> Strictness {
    if g.lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    }
}

fn retry_policy(g: &GlobalArgs) -> RetryPolicy {
    RetryPolicy {
        max_retries: g.retries,
        timeout: Duration::from_secs_f64(g.timeout.max(0.001)),
        ..RetryPolicy::default()
    }
}

fn score_config(g: &GlobalArgs, allow_ungrouped: bool) -> Result<ScoreConfig, CliError> {
    let mut weights = AttributeWeights::default();
    if let Some(path) = &g.weights {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        weights = weights.with_overrides_json(&text).map_err(|e| io_error(path, e))?;
    }
    if !(0.0..1.0).contains(&g.threshold) {
        return Err(invalid(format!("--threshold must be in [0, 1), got {}", g.threshold)));
    }
    Ok(ScoreConfig {
        attribute_weights: weights,
        match_threshold: g.threshold,
        allow_ungrouped,
        ..ScoreConfig::default()
    })
}

/// The similarity backend and, for HTTP encoders, the cache to save.
struct Backend {
    ensemble: SimilarityEnsemble,
    cache: Option<Arc<EmbeddingCache>>,
    description: Value,
}

impl Backend {
    fn finish(&self) -> Result<(), CliError> {
        if let Some(c) = &self.cache {
            c.save()?;
        }
        Ok(())
    }
}

fn embedding_backend(g: &GlobalArgs) -> Result<Backend, CliError> {
    if let Some(path) = &g.similarity_table {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let table = PairTable::from_json(&text).map_err(|e| io_error(path, e))?;
        return Ok(Backend {
            ensemble: SimilarityEnsemble::single(table),
            cache: None,
            description: json!({"backend": "table", "path": path}),
        });
    }
    if let Some(url) = g.embed_url.as_deref().filter(|u| !u.is_empty()) {
        let models: Vec<String> = if g.embed_models.is_empty() {
            DEFAULT_MODELS.iter().map(|m| m.to_string()).collect()
        } else {
            g.embed_models.clone()
        };
        let cache = Arc::new(match &g.cache {
            Some(p) => EmbeddingCache::open(p, 100_000)?,
            None => EmbeddingCache::in_memory(100_000),
        });
        let mut members: Vec<Arc<dyn SimilaritySource>> = Vec::new();
        for m in &models {
            let p = HttpEmbeddingProvider::new(url, m, retry_policy(g))?;
            members.push(Arc::new(EmbeddingSource(CachedProvider::new(p, Arc::clone(&cache)))));
        }
        return Ok(Backend {
            ensemble: SimilarityEnsemble::new(members)?,
            cache: g.cache.is_some().then_some(cache),
            description: json!({"backend": "http", "url": url, "models": models}),
        });
    }
    if g.embed_dim < 8 {
        return Err(invalid("--embed-dim must be at least 8"));
    }
    Ok(Backend {
        ensemble: SimilarityEnsemble::deterministic(g.seed, g.embed_dim),
        cache: None,
        description: json!({"backend": "deterministic", "seed": g.seed, "dim": g.embed_dim}),
    })
}

fn completion_backend(g: &GlobalArgs) -> Result<(Box<dyn CompletionProvider>, Value), CliError> {
    if let Some(path) = &g.transcript {
        let p = ScriptedProvider::load(path)?;
        return Ok((Box::new(p), json!({"backend": "scripted", "transcript": path})));
    }
    if let Some(url) = g.llm_url.as_deref().filter(|u| !u.is_empty()) {
        let p = HttpCompletionProvider::new(url, g.llm_model.clone(), retry_policy(g))?;
        return Ok((
            Box::new(p),
            json!({"backend": "http", "url": url, "model": g.llm_model}),
        ));
    }
    Err(invalid(format!(
        "no completion provider: pass --transcript or --llm-url (or set {ENV_LLM_URL})"
    )))
}

fn run_config(
    g: &GlobalArgs,
    command: &'static str,
    embedding: Value,
    score: ScoreConfig,
    format: Format,
) -> RunConfig {
    RunConfig {
        command,
        embedding,
        completion: Value::Null,
        score,
        structure: None,
        cache: g.cache.clone(),
        format,
        strictness: if g.lenient { "lenient" } else { "strict" },
        jobs: g.jobs,
        seed: g.seed,
    }
}

fn envelope(config: &RunConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("tool".into(), json!("lunguage"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert(
        "config".into(),
        serde_json::to_value(config).expect("config serializes"),
    );
    m
}

/// Writes `body` to `out` or stdout. Line-oriented formats written to a
/// file get a `<out>.meta.json` sidecar with the run configuration.
fn emit(out: Option<&Path>, body: &[u8], format: Format, config: &RunConfig) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, body).map_err(|e| io_error(path, e))?;
            if format != Format::Json {
                let mut meta_path = path.as_os_str().to_owned();
                meta_path.push(".meta.json");
                let meta_path = PathBuf::from(meta_path);
                let meta = serde_json::to_string_pretty(&Value::Object(envelope(config))).expect("meta serializes");
                fs::write(&meta_path, meta + "\n").map_err(|e| io_error(&meta_path, e))?;
            }
        }
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(body).and_then(|_| stdout.flush()).map_err(invalid)?;
        }
    }
    Ok(())
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

fn load(path: &Path, g: &GlobalArgs) -> Result<Vec<PatientSequence>, CliError> {
    let corpus = load_corpus(path, strictness(g)).map_err(invalid)?;
    for e in &corpus.skipped {
        log::warn!("skipped {e}");
    }
    Ok(corpus.sequences)
}

#[derive(Serialize)]
struct PairResult {
    patient_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    study_id: Option<String>,
    breakdown: ScoreBreakdown,
}

#[derive(Serialize)]
struct PairRow<'a> {
    patient_id: &'a str,
    study_id: &'a str,
    tp: f64,
    fp: f64,
    #[serde(rename = "fn")]
    fn_: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

impl<'a> PairRow<'a> {
    fn new(patient_id: &'a str, study_id: &'a str, s: Summary) -> Self {
        PairRow {
            patient_id,
            study_id,
            tp: s.tp,
            fp: s.fp,
            fn_: s.fn_,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        }
    }
}

fn pair_corpora(
    pred: Vec<PatientSequence>,
    gold: Vec<PatientSequence>,
) -> Result<Vec<(PatientSequence, PatientSequence)>, CliError> {
    let mut gold_by_id: HashMap<String, PatientSequence> = HashMap::new();
    for g in gold {
        let id = g.patient_id.clone();
        if gold_by_id.insert(id.clone(), g).is_some() {
            return Err(invalid(format!("gold: duplicate patient `{id}`")));
        }
    }
    let mut pairs = Vec::with_capacity(pred.len());
    for p in pred {
        let g = gold_by_id
            .remove(&p.patient_id)
            .ok_or_else(|| invalid(format!("patient `{}` has no gold entry", p.patient_id)))?;
        pairs.push((p, g));
    }
    if let Some(id) = gold_by_id.keys().min() {
        return Err(invalid(format!("gold patient `{id}` has no prediction")));
    }
    Ok(pairs)
}

pub fn cmd_score(g: &GlobalArgs, a: &ScoreArgs) -> Result<(), CliError> {
    let format = resolve_format(g, a.out.as_deref(), Format::Json);
    let config = score_config(g, a.allow_ungrouped)?;
    let pred = load(&a.pred, g)?;
    let gold = load(&a.gold, g)?;
    let pairs = pair_corpora(pred, gold)?;
    let backend = embedding_backend(g)?;
    let scorer = Scorer::new(&backend.ensemble, &config);

    let per_patient: Vec<Vec<PairResult>> = pairs
        .par_iter()
        .map(|(p, gd)| -> Result<Vec<PairResult>, CliError> {
            match a.mode {
                Mode::Sequential => Ok(vec![PairResult {
                    patient_id: gd.patient_id.clone(),
                    study_id: None,
                    breakdown: scorer.score_sequence(p, gd)?,
                }]),
                Mode::Single => {
                    if p.reports.len() != gd.reports.len() {
                        return Err(ScoreError::SequenceLengthMismatch {
                            pred: p.reports.len(),
                            gold: gd.reports.len(),
                        }
                        .into());
                    }
                    p.reports
                        .iter()
                        .zip(&gd.reports)
                        .map(|(pr, gr)| {
                            Ok(PairResult {
                                patient_id: gd.patient_id.clone(),
                                study_id: Some(gr.study_id.clone()),
                                breakdown: scorer.score_single(pr, gr)?,
                            })
                        })
                        .collect()
                }
            }
        })
        .collect::<Result<_, _>>()?;
    backend.finish()?;
    let results: Vec<PairResult> = per_patient.into_iter().flatten().collect();
    let mut total = Counts::default();
    for r in &results {
        total.add(&r.breakdown.counts());
    }
    let corpus = total.summary();
    eprintln!(
        "corpus: precision {:.4} recall {:.4} f1 {:.4} over {} pairs",
        corpus.precision,
        corpus.recall,
        corpus.f1,
        results.len()
    );

    let run = run_config(g, "score", backend.description.clone(), config, format);
    let body = match format {
        Format::Json => {
            let mut m = envelope(&run);
            m.insert("mode".into(), serde_json::to_value(a.mode).expect("mode"));
            m.insert("pairs".into(), serde_json::to_value(&results).expect("pairs"));
            m.insert("corpus".into(), serde_json::to_value(corpus).expect("corpus"));
            json_bytes(&Value::Object(m))
        }
        Format::Jsonl => {
            let mut out = String::new();
            for r in &results {
                out += &serde_json::to_string(r).expect("pair");
                out.push('\n');
            }
            out += &serde_json::to_string(&json!({"patient_id": "ALL", "corpus": corpus})).expect("corpus");
            out.push('\n');
            out.into_bytes()
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &results {
                let s = r.breakdown.counts().summary();
                w.serialize(PairRow::new(&r.patient_id, r.study_id.as_deref().unwrap_or(""), s))
                    .map_err(invalid)?;
            }
            w.serialize(PairRow::new("ALL", "", corpus)).map_err(invalid)?;
            w.into_inner().map_err(invalid)?
        }
    };
    emit(a.out.as_deref(), &body, format, &run)
}

fn read_inputs(path: &Path) -> Result<Vec<ReportInput>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let input: ReportInput =
            serde_json::from_str(line).map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(input);
    }
    Ok(out)
}

fn load_vocab(path: Option<&Path>) -> Result<Vocabulary, CliError> {
    match path {
        Some(p) => load_vocabulary(p).map_err(|e| io_error(p, e)),
        None => Ok(Vocabulary::new()),
    }
}

pub fn cmd_structure(g: &GlobalArgs, a: &StructureArgs) -> Result<(), CliError> {
    let format = resolve_format(g, a.out.as_deref(), Format::Jsonl);
    if format == Format::Csv {
        return Err(invalid("structure output is json or jsonl"));
    }
    let inputs = read_inputs(&a.input)?;
    let vocab = load_vocab(a.vocab.as_deref())?;
    let index = match &a.examples {
        Some(p) => {
            let seqs = load(p, g)?;
            let reports = seqs.into_iter().flat_map(|s| s.reports);
            FewShotIndex::new(
                reports
                    .filter_map(|r| {
                        let text = crate::structure::report_text(r.source_text.as_ref()?);
                        Some(Example { text, report: r })
                    })
                    .collect(),
            )
        }
        None => FewShotIndex::default(),
    };
    if a.shots > index.len() {
        log::warn!(
            "--shots {} exceeds the {} available examples; using all of them",
            a.shots,
            index.len()
        );
    }
    let (base, completion) = completion_backend(g)?;
    let provider: Box<dyn CompletionProvider> = match a.rate_limit {
        Some(r) if r > 0.0 => Box::new(RateLimited::new(base, Arc::new(RateLimiter::new(r, 1)))),
        Some(r) => return Err(invalid(format!("--rate-limit must be positive, got {r}"))),
        None => base,
    };
    let pipeline = Pipeline {
        provider: provider.as_ref(),
        vocab: &vocab,
        index: &index,
        prompt: PromptOptions {
            k_shots: a.shots,
            max_example_tokens: a.max_example_tokens,
        },
        repair: RepairOptions {
            max_repairs: a.max_repairs,
            ..RepairOptions::default()
        },
    };

    let mut transcripts: Vec<(String, Transcript)> = Vec::new();
    let records: Vec<Value> = if a.sequential {
        let mut patients: Vec<(String, Vec<ReportInput>)> = Vec::new();
        let mut slot: HashMap<String, usize> = HashMap::new();
        for (i, r) in inputs.into_iter().enumerate() {
            let pid = r.patient_id.clone().ok_or_else(|| {
                invalid(format!(
                    "{}:{}: --sequential needs patient_id",
                    a.input.display(),
                    i + 1
                ))
            })?;
            let k = *slot.entry(pid.clone()).or_insert_with(|| {
                patients.push((pid.clone(), Vec::new()));
                patients.len() - 1
            });
            patients[k].1.push(r);
        }
        let runs: Vec<PatientRun> = patients
            .par_iter()
            .map(|(pid, reports)| pipeline.structure_patient(pid, reports))
            .collect::<Result<_, _>>()?;
        runs.into_iter()
            .map(|run| {
                let id = run.sequence.patient_id.clone();
                transcripts.extend(run.transcripts.into_iter().map(|t| (id.clone(), t)));
                serde_json::from_str(&sequence_to_json(&run.sequence)).expect("sequence json")
            })
            .collect()
    } else {
        let run = pipeline.structure_reports(&inputs)?;
        let ids: Vec<String> = inputs.iter().map(|r| r.study_id.clone()).collect();
        transcripts.extend(ids.into_iter().zip(run.transcripts));
        run.sequence
            .reports
            .iter()
            .map(|r| serde_json::from_str(&report_to_json(r)).expect("report json"))
            .collect()
    };

    if let Some(path) = &a.log_transcripts {
        let mut text = String::new();
        for (id, t) in &transcripts {
            text += &serde_json::to_string(&json!({"id": id, "transcript": t})).expect("transcript");
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| io_error(path, e))?;
    }

    let mut run = run_config(g, "structure", Value::Null, ScoreConfig::default(), format);
    run.completion = completion;
    run.structure = Some(json!({
        "shots": a.shots,
        "max_example_tokens": a.max_example_tokens,
        "max_repairs": a.max_repairs,
        "sequential": a.sequential,
        "vocab": a.vocab,
        "examples": a.examples,
        "rate_limit": a.rate_limit,
    }));
    let body = match format {
        Format::Json => {
            let mut m = envelope(&run);
            let key = if a.sequential { "sequences" } else { "reports" };
            m.insert(key.into(), Value::Array(records));
            json_bytes(&Value::Object(m))
        }
        _ => {
            let mut out = String::new();
            for r in &records {
                out += &serde_json::to_string(r).expect("record");
                out.push('\n');
            }
            out.into_bytes()
        }
    };
    emit(a.out.as_deref(), &body, format, &run)
}

#[derive(Serialize)]
struct MatchRow {
    study_id: String,
    section: String,
    #[serde(flatten)]
    span: SpanMatch,
}

pub fn cmd_match_vocab(g: &GlobalArgs, a: &MatchVocabArgs) -> Result<(), CliError> {
    let format = resolve_format(g, a.out.as_deref(), Format::Json);
    let vocab = load_vocab(Some(&a.vocab))?;
    let mut rows = Vec::new();
    let mut plain = |text: &str| {
        for span in match_spans(&vocab, text) {
            rows.push(MatchRow {
                study_id: String::new(),
                section: String::new(),
                span,
            });
        }
    };
    match (&a.text, &a.input) {
        (Some(t), _) => plain(t),
        (None, Some(p)) if p.extension().is_some_and(|x| x == "jsonl") => {
            for input in read_inputs(p)? {
                for (section, text) in &input.sections {
                    for span in match_spans(&vocab, text) {
                        rows.push(MatchRow {
                            study_id: input.study_id.clone(),
                            section: section.as_str().to_string(),
                            span,
                        });
                    }
                }
            }
        }
        (None, Some(p)) => plain(&fs::read_to_string(p).map_err(|e| io_error(p, e))?),
        (None, None) => return Err(invalid("pass --text or --in")),
    }
    let mut run = run_config(g, "match-vocab", Value::Null, ScoreConfig::default(), format);
    run.structure = Some(json!({"vocab": a.vocab}));
    let body = match format {
        Format::Json => {
            let mut m = envelope(&run);
            m.insert("matches".into(), serde_json::to_value(&rows).expect("rows"));
            json_bytes(&Value::Object(m))
        }
        Format::Jsonl => rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row") + "\n")
            .collect::<String>()
            .into_bytes(),
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record([
                "study_id",
                "section",
                "text",
                "char_start",
                "char_end",
                "sent_idx",
                "matched_term",
                "category",
            ])
            .map_err(invalid)?;
            for r in &rows {
                w.write_record([
                    r.study_id.as_str(),
                    r.section.as_str(),
                    &r.span.text,
                    &r.span.char_start.to_string(),
                    &r.span.char_end.to_string(),
                    &r.span.sent_idx.to_string(),
                    &r.span.matched_term,
                    &r.span.category,
                ])
                .map_err(invalid)?;
            }
            w.into_inner().map_err(invalid)?
        }
    };
    emit(a.out.as_deref(), &body, format, &run)
}

pub fn cmd_perturb(g: &GlobalArgs, a: &PerturbArgs) -> Result<(), CliError> {
    let format = resolve_format(g, a.out.as_deref(), Format::Json);
    let config = score_config(g, false)?;
    let golds = load(&a.input, g)?;
    let mut antonyms = AntonymMap::builtin();
    if let Some(p) = &a.antonyms {
        let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
        let pairs: Vec<(String, String)> = serde_json::from_str(&text).map_err(|e| io_error(p, e))?;
        antonyms.extend(pairs).map_err(|e| io_error(p, e))?;
    }
    let attribute = match &a.attribute {
        Some(k) => Some(AttributeKind::from_key(k).ok_or_else(|| invalid(format!("unknown attribute `{k}`")))?),
        None => None,
    };
    let perturbation = Perturbation {
        kind: a.kind,
        count: a.count,
        attribute,
        value: a.value.clone(),
        seed: g.seed,
    };
    let backend = embedding_backend(g)?;
    let scorer = Scorer::new(&backend.ensemble, &config);
    let report = run_sensitivity(&scorer, &golds, &perturbation, &antonyms)?;
    backend.finish()?;
    if report.cases.is_empty() {
        eprintln!("notice: no patient had anything to perturb");
    }
    for id in &report.skipped {
        eprintln!("notice: {id} skipped, nothing to perturb");
    }

    let mut run = run_config(g, "perturb", backend.description.clone(), config, format);
    run.structure = Some(json!({"antonyms": a.antonyms}));
    let body = match format {
        Format::Json => {
            let mut m = envelope(&run);
            m.insert("report".into(), serde_json::to_value(&report).expect("report"));
            json_bytes(&Value::Object(m))
        }
        Format::Jsonl => report
            .cases
            .iter()
            .map(|c| serde_json::to_string(c).expect("case") + "\n")
            .collect::<String>()
            .into_bytes(),
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(&report.cases, &mut buf)?;
            buf
        }
    };
    emit(a.out.as_deref(), &body, format, &run)
}

pub fn cmd_validate(g: &GlobalArgs, a: &ValidateArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&a.input, Strictness::Lenient).map_err(invalid)?;
    let errors: Vec<String> = corpus.skipped.iter().map(ToString::to_string).collect();
    for e in &errors {
        eprintln!("{e}");
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    counts.insert("sequences", corpus.sequences.len());
    counts.insert("reports", corpus.sequences.iter().map(|s| s.reports.len()).sum());
    counts.insert(
        "findings",
        corpus.sequences.iter().map(PatientSequence::finding_count).sum(),
    );
    counts.insert("invalid", errors.len());
    let summary = json!({"input": a.input, "counts": counts, "errors": errors});
    let mut out = io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("summary")).map_err(invalid)?;
    if !errors.is_empty() && !g.lenient {
        return Err(invalid(format!(
            "{} invalid entries in {}",
            errors.len(),
            a.input.display()
        )));
    }
    Ok(())
}
