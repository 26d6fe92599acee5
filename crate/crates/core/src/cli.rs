//! The `hallu-pref` command line.
//!
//! Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
//! Every run writes a `run_manifest.json` (or `--manifest PATH`) holding the
//! resolved configuration, the tool version and SHA-256 digests of inputs.
//! Dataset metadata timestamps come from `SOURCE_DATE_EPOCH`, else 0, so
//! repeated runs are byte-identical.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::jsonl::{
    create_parent,
    read_feedback_dataset, read_preference_dataset, write_meta, AnnotatedLine, JsonlReader, JsonlWriter,
    PreferenceLine, ResponseLine,
};
use crate::metrics::{
    amber_generative, chair_object_halbench, detection_binary_metrics, detection_multiclass_metrics,
    parse_metric_groups, severity_score_metric, EvalLine, EvalRecord, MetricGroup, MetricReport, ObjectLexicon,
};
use crate::pipeline::{
    annotate_dataset, build_preference_dataset, generate_synthetic_corpus, BuildInput, BuildOptions, BuildReport,
    Detector, QuarantineRecord, ReferenceDetector, ReferenceRewriter, RemoteClient, RetryPolicy, Rewriter,
    SyntheticWorld,
};
use crate::policy::{snapshot_reference, ToyPolicy, Vocabulary, DEFAULT_BUCKETS};
use crate::preference::LossKind;
use crate::trainer::{train, write_trace_csv, TrainerConfig};
use crate::types::{AnnotatedResponse, DatasetMeta, FeedbackRecord};

/// Records read and processed per batch by the streaming subcommands.
const CHUNK: usize = 256;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn rt(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "hallu-pref", version, about = "Hallucination feedback, preference data and metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted hallucinations.
    Gen(GenArgs),
    /// Attach sentence-level feedback to responses.
    Annotate(AnnotateArgs),
    /// Detect, rewrite and pair responses into a preference dataset.
    BuildPrefs(BuildPrefsArgs),
    /// Train the bigram policy with DPO or HSA-DPO.
    Train(TrainArgs),
    /// Compute hallucination and detection metrics.
    Eval(EvalArgs),
}

/// `reference` or `remote:ADDR`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Endpoint {
    Reference,
    Remote(String),
}

fn parse_endpoint(s: &str) -> Result<Endpoint, String> {
    match s {
        "reference" => Ok(Endpoint::Reference),
        _ => match s.strip_prefix("remote:") {
            Some(addr) if !addr.is_empty() => Ok(Endpoint::Remote(addr.to_string())),
            _ => Err(format!("expected `reference` or `remote:ADDR`, got `{s}`")),
        },
    }
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let r: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&r) {
        Ok(r)
    } else {
        Err(format!("rate must be in [0, 1], got {r}"))
    }
}

/// Comma-separated metric groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricGroups(pub Vec<MetricGroup>);

fn parse_groups(s: &str) -> Result<MetricGroups, String> {
    parse_metric_groups(s).map(MetricGroups).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// `standard` or a world JSON file.
    #[arg(long, default_value = "standard")]
    pub world: String,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value = "0.3", value_parser = parse_rate)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct RemoteArgs {
    #[arg(long, env = "HALLU_PREF_TIMEOUT_MS", default_value_t = 30_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    /// First backoff delay; doubles on each retry.
    #[arg(long, default_value_t = 1_000)]
    pub retry_base_ms: u64,
    #[arg(long, default_value_t = crate::pipeline::build::DEFAULT_MAX_IN_FLIGHT)]
    pub max_in_flight: usize,
}

impl RemoteArgs {
    fn client(&self, addr: &str) -> RemoteClient {
        RemoteClient::http(
            addr,
            Duration::from_millis(self.timeout_ms),
            RetryPolicy {
                max_retries: self.retries,
                base_delay: Duration::from_millis(self.retry_base_ms),
                ..RetryPolicy::default()
            },
        )
    }
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Responses JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, env = "HALLU_PREF_DETECTOR", default_value = "reference", value_parser = parse_endpoint)]
    pub detector: Endpoint,
    /// World for the reference detector: `standard` or a JSON file.
    #[arg(long, default_value = "standard")]
    pub world: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.quarantine.jsonl`.
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    /// Defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub remote: RemoteArgs,
}

#[derive(Debug, Args)]
pub struct BuildPrefsArgs {
    /// Responses or annotated responses JSONL. Annotated lines skip detection.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, env = "HALLU_PREF_DETECTOR", default_value = "reference", value_parser = parse_endpoint)]
    pub detector: Endpoint,
    #[arg(long, env = "HALLU_PREF_REWRITER", default_value = "reference", value_parser = parse_endpoint)]
    pub rewriter: Endpoint,
    #[arg(long, default_value = "standard")]
    pub world: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub remote: RemoteArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub prefs: PathBuf,
    /// `key=value` file applied before flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prompt buckets of a fresh policy; ignored with `--init-ckpt`.
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    pub buckets: usize,
    #[arg(long)]
    pub init_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub ckpt_out: PathBuf,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Eval-record JSONL, needed by `chair` and `amber`.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value = "chair,amber", value_parser = parse_groups)]
    pub metrics: MetricGroups,
    /// Annotated JSONL with predicted feedback (`detect`).
    #[arg(long)]
    pub predicted: Option<PathBuf>,
    /// Annotated JSONL with gold feedback (`detect`).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Annotated JSONL scored by `severity`; defaults to `--predicted`.
    #[arg(long)]
    pub annotated: Option<PathBuf>,
    /// JSON report; an aligned table goes to stdout either way.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::BuildPrefs(a) => cmd_build_prefs(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn created_unix() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

fn load_world(arg: &str) -> Result<SyntheticWorld, CliError> {
    if arg == "standard" {
        return Ok(SyntheticWorld::standard());
    }
    let text = std::fs::read_to_string(arg).map_err(|e| rt(format!("{arg}: {e}")))?;
    let world: SyntheticWorld = serde_json::from_str(&text).map_err(|e| rt(format!("{arg}: {e}")))?;
    world.validate().map_err(|e| rt(format!("{arg}: {e}")))?;
    Ok(world)
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = File::open(path).map_err(|e| rt(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).map_err(rt)?;
    Ok(hex::encode(h.finalize()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(rt)?;
    s.push('\n');
    create_parent(path).and_then(|_| std::fs::write(path, s)).map_err(|e| rt(format!("{}: {e}", path.display())))
}

fn write_manifest(
    path: &Path,
    subcommand: &str,
    config: Value,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<(), CliError> {
    let inputs = inputs
        .iter()
        .map(|p| Ok(json!({"path": p.display().to_string(), "sha256": sha256_file(p)?})))
        .collect::<Result<Vec<_>, CliError>>()?;
    let outputs: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
    write_json(
        path,
        &json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": subcommand,
            "config": config,
            "inputs": inputs,
            "outputs": outputs,
        }),
    )
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let world = load_world(&a.world)?;
    let mut corpus = generate_synthetic_corpus(&world, a.n as usize, a.rate, a.seed).map_err(rt)?;
    corpus.dataset.meta = DatasetMeta::new(format!("synthetic:seed={}", a.seed), created_unix());
    std::fs::create_dir_all(&a.out).map_err(|e| rt(format!("{}: {e}", a.out.display())))?;

    let responses = a.out.join("responses.jsonl");
    let ground_truth = a.out.join("ground_truth.jsonl");
    let eval_records = a.out.join("eval_records.jsonl");
    let lexicon = a.out.join("lexicon.json");
    let world_out = a.out.join("world.json");

    let mut w = JsonlWriter::create(&responses).map_err(rt)?;
    for r in corpus.dataset.records() {
        w.write(&ResponseLine::new(&r.prompt, &r.annotated.response)).map_err(rt)?;
    }
    w.finish().map_err(rt)?;
    write_meta(&responses, &corpus.dataset.meta).map_err(rt)?;
    crate::jsonl::write_feedback_dataset(&ground_truth, &corpus.dataset).map_err(rt)?;
    let mut w = JsonlWriter::create(&eval_records).map_err(rt)?;
    for r in &corpus.eval_records {
        w.write(r).map_err(rt)?;
    }
    w.finish().map_err(rt)?;
    write_json(&lexicon, &ObjectLexicon::from_world(&world))?;
    write_json(&world_out, &world)?;

    let manifest = a.manifest.clone().unwrap_or_else(|| a.out.join("run_manifest.json"));
    let world_input: Vec<&Path> = if a.world == "standard" { vec![] } else { vec![Path::new(&a.world)] };
    write_manifest(
        &manifest,
        "gen",
        json!({"world": a.world, "n": a.n, "rate": a.rate, "seed": a.seed, "out": a.out}),
        &world_input,
        &[&responses, &ground_truth, &eval_records, &lexicon, &world_out],
    )?;
    println!("wrote {} records to {}", corpus.dataset.len(), a.out.display());
    Ok(())
}

/// Reads JSONL lines as [`BuildInput`]s; lines with `feedback` are annotated.
fn read_inputs(path: &Path) -> Result<impl Iterator<Item = Result<BuildInput, CliError>>, CliError> {
    let reader = JsonlReader::<_, Value>::open(path).map_err(rt)?;
    let path = path.display().to_string();
    Ok(reader.map(move |item| {
        let (line, v) = item.map_err(|e| rt(format!("{path}: {e}")))?;
        let ctx = |e: &dyn Display| rt(format!("{path}: line {line}: {e}"));
        if v.get("feedback").is_some() {
            let l: AnnotatedLine = serde_json::from_value(v).map_err(|e| ctx(&e))?;
            Ok(BuildInput::Annotated(FeedbackRecord::try_from(l).map_err(|e| ctx(&e))?))
        } else {
            let l: ResponseLine = serde_json::from_value(v).map_err(|e| ctx(&e))?;
            let (prompt, response) = l.into_parts().map_err(|e| ctx(&e))?;
            Ok(BuildInput::Raw { prompt, response })
        }
    }))
}

fn make_detector(e: &Endpoint, world: &str, remote: &RemoteArgs) -> Result<Box<dyn Detector + Send>, CliError> {
    Ok(match e {
        Endpoint::Reference => Box::new(ReferenceDetector { world: load_world(world)? }),
        Endpoint::Remote(addr) => Box::new(remote.client(addr)),
    })
}

fn make_rewriter(e: &Endpoint, remote: &RemoteArgs) -> Box<dyn Rewriter + Send> {
    match e {
        Endpoint::Reference => Box::new(ReferenceRewriter),
        Endpoint::Remote(addr) => Box::new(remote.client(addr)),
    }
}

fn duplicate(id: &str) -> QuarantineRecord {
    QuarantineRecord {
        prompt_id: id.to_string(),
        stage: "input".into(),
        reason: format!("duplicate prompt_id `{id}`"),
        raw: None,
    }
}

/// Pulls up to [`CHUNK`] inputs, diverting repeated prompt ids to quarantine.
fn next_chunk(
    inputs: &mut impl Iterator<Item = Result<BuildInput, CliError>>,
    seen: &mut HashSet<String>,
    quarantine: &mut JsonlWriter<std::io::BufWriter<File>>,
    report: &mut BuildReport,
) -> Result<Vec<BuildInput>, CliError> {
    let mut chunk = Vec::with_capacity(CHUNK);
    for item in inputs.by_ref() {
        let item = item?;
        report.input += 1;
        let id = item.prompt().prompt_id.clone();
        if !seen.insert(id.clone()) {
            quarantine.write(&duplicate(&id)).map_err(rt)?;
            report.quarantined += 1;
            continue;
        }
        chunk.push(item);
        if chunk.len() == CHUNK {
            break;
        }
    }
    Ok(chunk)
}

fn cmd_annotate(a: AnnotateArgs) -> Result<(), CliError> {
    let detector = make_detector(&a.detector, &a.world, &a.remote)?;
    let quarantine_path = a.quarantine.clone().unwrap_or_else(|| with_suffix(&a.out, ".quarantine.jsonl"));
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".report.json"));
    let meta = DatasetMeta::new(format!("annotate:{}", a.input.display()), created_unix());
    let opts = BuildOptions {
        max_in_flight: a.remote.max_in_flight,
    };

    let mut inputs = read_inputs(&a.input)?;
    let mut out = JsonlWriter::create(&a.out).map_err(rt)?;
    let mut quarantine = JsonlWriter::create(&quarantine_path).map_err(rt)?;
    let mut report = BuildReport::default();
    let mut seen = HashSet::new();
    loop {
        let chunk = next_chunk(&mut inputs, &mut seen, &mut quarantine, &mut report)?;
        if chunk.is_empty() {
            break;
        }
        let pairs: Vec<_> = chunk
            .into_iter()
            .map(|i| match i {
                BuildInput::Raw { prompt, response } => (prompt, response),
                BuildInput::Annotated(r) => (r.prompt, r.annotated.response),
            })
            .collect();
        let res = annotate_dataset(&pairs, &detector, meta.clone(), opts);
        for r in res.dataset.records() {
            out.write(&AnnotatedLine::from(r)).map_err(rt)?;
        }
        for q in &res.quarantine {
            quarantine.write(q).map_err(rt)?;
        }
        report.emitted += res.report.emitted;
        report.quarantined += res.report.quarantined;
    }
    out.finish().map_err(rt)?;
    quarantine.finish().map_err(rt)?;
    write_meta(&a.out, &meta).map_err(rt)?;
    write_json(&report_path, &report)?;

    let manifest = a.manifest.clone().unwrap_or_else(|| parent_dir(&a.out).join("run_manifest.json"));
    write_manifest(
        &manifest,
        "annotate",
        json!({
            "in": a.input, "detector": a.detector, "world": a.world, "out": a.out,
            "quarantine": quarantine_path, "report": report_path,
            "timeout_ms": a.remote.timeout_ms, "retries": a.remote.retries,
            "retry_base_ms": a.remote.retry_base_ms, "max_in_flight": a.remote.max_in_flight,
        }),
        &[&a.input],
        &[&a.out, &quarantine_path, &report_path],
    )?;
    println!("{}", serde_json::to_string(&report).map_err(rt)?);
    if report.emitted == 0 {
        return Err(rt("no records were annotated"));
    }
    Ok(())
}

fn cmd_build_prefs(a: BuildPrefsArgs) -> Result<(), CliError> {
    let detector = make_detector(&a.detector, &a.world, &a.remote)?;
    let rewriter = make_rewriter(&a.rewriter, &a.remote);
    let quarantine_path = a.quarantine.clone().unwrap_or_else(|| with_suffix(&a.out, ".quarantine.jsonl"));
    let report_path = a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".report.json"));
    let meta = DatasetMeta::new(format!("build-prefs:{}", a.input.display()), created_unix());
    let opts = BuildOptions {
        max_in_flight: a.remote.max_in_flight,
    };

    let mut inputs = read_inputs(&a.input)?;
    let mut out = JsonlWriter::create(&a.out).map_err(rt)?;
    let mut quarantine = JsonlWriter::create(&quarantine_path).map_err(rt)?;
    let mut report = BuildReport::default();
    let mut seen = HashSet::new();
    loop {
        let chunk = next_chunk(&mut inputs, &mut seen, &mut quarantine, &mut report)?;
        if chunk.is_empty() {
            break;
        }
        let res = build_preference_dataset(&chunk, &detector, &rewriter, meta.clone(), opts);
        for p in res.dataset.pairs() {
            out.write(&PreferenceLine::from(p)).map_err(rt)?;
        }
        for q in &res.quarantine {
            quarantine.write(q).map_err(rt)?;
        }
        report.emitted += res.report.emitted;
        report.skipped_clean += res.report.skipped_clean;
        report.quarantined += res.report.quarantined;
    }
    out.finish().map_err(rt)?;
    quarantine.finish().map_err(rt)?;
    write_meta(&a.out, &meta).map_err(rt)?;
    write_json(&report_path, &report)?;

    let manifest = a.manifest.clone().unwrap_or_else(|| parent_dir(&a.out).join("run_manifest.json"));
    write_manifest(
        &manifest,
        "build-prefs",
        json!({
            "in": a.input, "detector": a.detector, "rewriter": a.rewriter, "world": a.world,
            "out": a.out, "quarantine": quarantine_path, "report": report_path,
            "timeout_ms": a.remote.timeout_ms, "retries": a.remote.retries,
            "retry_base_ms": a.remote.retry_base_ms, "max_in_flight": a.remote.max_in_flight,
        }),
        &[&a.input],
        &[&a.out, &quarantine_path, &report_path],
    )?;
    println!("{}", serde_json::to_string(&report).map_err(rt)?);
    if report.input == 0 {
        return Err(rt("input is empty"));
    }
    if report.emitted == 0 && report.quarantined > 0 {
        return Err(rt("every hallucinated record was quarantined"));
    }
    Ok(())
}

/// Defaults, then `--config`, then flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainerConfig, CliError> {
    let mut cfg = TrainerConfig::default();
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| rt(format!("{}: {e}", p.display())))?;
        cfg.apply_kv(&text).map_err(usage)?;
    }
    if let Some(v) = a.loss {
        cfg.loss_kind = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_train_config(&a)?;
    if a.buckets == 0 {
        return Err(usage("--buckets must be at least 1"));
    }
    let data = read_preference_dataset(&a.prefs).map_err(|e| rt(format!("{}: {e}", a.prefs.display())))?;
    let init = match &a.init_ckpt {
        Some(p) => ToyPolicy::load(p).map_err(|e| rt(format!("{}: {e}", p.display())))?,
        None => {
            let texts = data
                .pairs()
                .iter()
                .flat_map(|p| [p.chosen.raw_text(), p.rejected.response.raw_text()]);
            ToyPolicy::uniform(Vocabulary::from_texts(texts, false).map_err(rt)?, a.buckets).map_err(rt)?
        }
    };
    let reference = snapshot_reference(&init);
    let out = train(init, &reference, &data, &cfg).map_err(rt)?;
    out.policy.save(&a.ckpt_out).map_err(rt)?;
    let mut outputs: Vec<&Path> = vec![&a.ckpt_out];
    if let Some(p) = &a.trace_out {
        let f = create_parent(p).and_then(|_| File::create(p)).map_err(|e| rt(format!("{}: {e}", p.display())))?;
        let mut w = std::io::BufWriter::new(f);
        write_trace_csv(&mut w, &out.trace).map_err(rt)?;
        w.flush().map_err(rt)?;
        outputs.push(p);
    }

    let mut inputs: Vec<&Path> = vec![&a.prefs];
    inputs.extend(a.config.as_deref());
    inputs.extend(a.init_ckpt.as_deref());
    let manifest = a.manifest.clone().unwrap_or_else(|| parent_dir(&a.ckpt_out).join("run_manifest.json"));
    write_manifest(
        &manifest,
        "train",
        json!({
            "trainer": cfg, "buckets": reference.buckets(), "prefs": a.prefs,
            "init_ckpt": a.init_ckpt, "ckpt_out": a.ckpt_out, "trace_out": a.trace_out,
        }),
        &inputs,
        &outputs,
    )?;
    if let Some(last) = out.trace.last() {
        println!("step {} loss {:.6}", last.step, last.loss);
    }
    Ok(())
}

fn read_annotated(path: &Path) -> Result<Vec<AnnotatedResponse>, CliError> {
    Ok(read_feedback_dataset(path)
        .map_err(|e| rt(format!("{}: {e}", path.display())))?
        .records()
        .iter()
        .map(|r| r.annotated.clone())
        .collect())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let mut report = MetricReport::default();
    let mut inputs: Vec<&Path> = Vec::new();
    let wants = |g| a.metrics.0.contains(&g);

    if wants(MetricGroup::Chair) || wants(MetricGroup::Amber) {
        let (Some(rp), Some(lp)) = (&a.records, &a.lexicon) else {
            return Err(usage("chair/amber metrics need --records and --lexicon"));
        };
        let mut records = Vec::new();
        for item in JsonlReader::<_, EvalLine>::open(rp).map_err(rt)? {
            let (line, l) = item.map_err(|e| rt(format!("{}: {e}", rp.display())))?;
            records.push(EvalRecord::try_from(l).map_err(|e| rt(format!("{}: line {line}: {e}", rp.display())))?);
        }
        let f = File::open(lp).map_err(|e| rt(format!("{}: {e}", lp.display())))?;
        let lexicon: ObjectLexicon =
            serde_json::from_reader(BufReader::new(f)).map_err(|e| rt(format!("{}: {e}", lp.display())))?;
        if wants(MetricGroup::Chair) {
            report.extend(chair_object_halbench(&records, &lexicon).map_err(rt)?);
        }
        if wants(MetricGroup::Amber) {
            let with_cog = records.iter().all(|r| r.cognition_decoys().is_some());
            report.extend(amber_generative(&records, &lexicon, with_cog).map_err(rt)?);
        }
        inputs.extend([rp.as_path(), lp.as_path()]);
    }
    if wants(MetricGroup::Detect) {
        let (Some(pp), Some(gp)) = (&a.predicted, &a.gold) else {
            return Err(usage("detect metrics need --predicted and --gold"));
        };
        let (pred, gold) = (read_annotated(pp)?, read_annotated(gp)?);
        report.extend(detection_binary_metrics(&pred, &gold).map_err(rt)?);
        report.extend(detection_multiclass_metrics(&pred, &gold).map_err(rt)?);
        inputs.extend([pp.as_path(), gp.as_path()]);
    }
    if wants(MetricGroup::Severity) {
        let Some(sp) = a.annotated.as_ref().or(a.predicted.as_ref()) else {
            return Err(usage("severity metric needs --annotated or --predicted"));
        };
        report.extend(severity_score_metric(&read_annotated(sp)?).map_err(rt)?);
        if !inputs.contains(&sp.as_path()) {
            inputs.push(sp);
        }
    }

    print!("{}", report.to_table());
    if let Some(out) = &a.report_out {
        create_parent(out)
            .and_then(|_| std::fs::write(out, report.to_json() + "\n"))
            .map_err(|e| rt(format!("{}: {e}", out.display())))?;
        let groups: Vec<String> = a.metrics.0.iter().map(|g| format!("{g:?}").to_lowercase()).collect();
        let manifest = a.manifest.clone().unwrap_or_else(|| parent_dir(out).join("run_manifest.json"));
        write_manifest(
            &manifest,
            "eval",
            json!({
                "records": a.records, "lexicon": a.lexicon, "metrics": groups,
                "predicted": a.predicted, "gold": a.gold, "annotated": a.annotated, "report_out": out,
            }),
            &inputs,
            &[out],
        )?;
    } else if let Some(m) = &a.manifest {
        write_manifest(m, "eval", json!({"metrics": format!("{:?}", a.metrics.0)}), &inputs, &[])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_parse() {
        assert_eq!(parse_endpoint("reference"), Ok(Endpoint::Reference));
        assert_eq!(
            parse_endpoint("remote:127.0.0.1:8080/detect"),
            Ok(Endpoint::Remote("127.0.0.1:8080/detect".into()))
        );
        assert!(parse_endpoint("remote:").is_err());
        assert!(parse_endpoint("gpt").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["hallu-pref", "gen", "--rate", "1.5", "--out", "x"]), 2);
        assert_eq!(run(["hallu-pref", "eval", "--metrics", "bleu"]), 2);
        assert_eq!(run(["hallu-pref", "frobnicate"]), 2);
        assert_eq!(run(["hallu-pref", "--help"]), 0);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("train.cfg");
        std::fs::write(&cfg, "beta=0.3\nsteps=5\nloss=dpo\n").unwrap();
        let cli = Cli::try_parse_from([
            "hallu-pref",
            "train",
            "--prefs",
            "p.jsonl",
            "--ckpt-out",
            "c.json",
            "--config",
            cfg.to_str().unwrap(),
            "--steps",
            "9",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { unreachable!() };
        let r = resolve_train_config(&a).unwrap();
        assert_eq!((r.beta, r.steps, r.loss_kind), (0.3, 9, LossKind::Dpo));
        assert_eq!(r.learning_rate, TrainerConfig::default().learning_rate);
    }
}
