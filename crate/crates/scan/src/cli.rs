//! Subcommand surface binding the library into reproducible, config-driven
//! runs. Every run writes a manifest recording the resolved configuration,
//! the seed, and a digest of each emitted artifact. Flag precedence is
//! CLI flag > config file > built-in default.

use crate::confidence::estimate_self_confidence;
use crate::denoise::label_noise_ratio;
use crate::evalkit::{
    first_error_f1, judge_selection_accuracy, predict_first_error_from_scores, EvalCase,
    ScoredResponse, SelectionMethod,
};
use crate::model::{ErrorLocation, JudgeMode, Question, SamplingParams};
use crate::noise::{
    distribution_report, read_records, run_noise_study, write_records, write_report_files,
    StudyWorld,
};
use crate::provider::{HttpProvider, ProviderConfig, RolloutProvider};
use crate::simworld::{gen_world, true_error_from_steps, SimCompleterParams, SimProvider};
use crate::synthesis::{
    build_http_providers, merge_datasets, run_synthesis_with_providers, CancelFlag,
    SynthesisConfig, SynthesisError,
};
use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_PROVIDER: u8 = 2;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(name = "scan", version, about = "Monte Carlo step annotation, denoised labeling, and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthesis pipeline from a JSON config file.
    Synthesize(SynthesizeArgs),
    /// Step-annotate a response file against a configured backend.
    Annotate(AnnotateArgs),
    /// Estimate self-confidence over a question corpus.
    Confidence(ConfidenceArgs),
    /// Noise-distribution reports from saved records or a fresh simulated study.
    AnalyzeNoise(AnalyzeNoiseArgs),
    /// Best-of-N selection accuracy per aggregation method.
    EvalBon(EvalBonArgs),
    /// First-error F1 over evaluation cases.
    EvalF1(EvalF1Args),
    /// Generate a seeded world and run the simulated end-to-end pipeline.
    Simulate(SimulateArgs),
    /// Merge datasets with stable ordering and duplicate detection.
    Merge(MergeArgs),
}

#[derive(Args)]
struct SynthesizeArgs {
    /// JSON config mirroring the synthesis configuration fields.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Rollouts per step.
    #[arg(long)]
    k: Option<u32>,
    /// Tolerance distance for soft labels.
    #[arg(long)]
    d: Option<u32>,
    /// Self-confidence selection threshold for negatives.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Responses generated per question.
    #[arg(long = "n-responses")]
    n_responses: Option<u32>,
    /// Restrict the run to the provider with this model name.
    #[arg(long)]
    provider: Option<String>,
    /// Override the (selected) provider's endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Override the (selected) provider's model name.
    #[arg(long)]
    model: Option<String>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from an existing journal in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct AnnotateArgs {
    /// JSONL of responses: {"question_id", "steps": [...]}.
    #[arg(long)]
    responses: PathBuf,
    /// JSONL of questions with gold answers.
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 8)]
    k: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ConfidenceArgs {
    /// JSONL of questions with gold answers.
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    model: String,
    /// Samples per question.
    #[arg(long = "n-responses", default_value_t = 16)]
    n_responses: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeNoiseArgs {
    /// Precomputed noise-record JSONL; omit to run a simulated study.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Capability values for the simulated study worlds (comma separated).
    #[arg(long = "p-solve", value_delimiter = ',', default_values_t = vec![0.1, 0.5, 0.9])]
    p_solve: Vec<f64>,
    /// Correction probability shared by the study worlds.
    #[arg(long = "p-fix", default_value_t = 0.2)]
    p_fix: f64,
    /// Questions per world.
    #[arg(long, default_value_t = 40)]
    problems: u32,
    /// Responses per question.
    #[arg(long = "n-responses", default_value_t = 16)]
    n_responses: u32,
    #[arg(long, default_value_t = 8)]
    k: u32,
    #[arg(long)]
    out: PathBuf,
    /// Also emit SVG bar charts.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct EvalBonArgs {
    /// JSONL of scored candidates: {"question_id", "answer", "step_scores"}.
    #[arg(long)]
    candidates: PathBuf,
    /// JSONL of questions with gold answers.
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalF1Args {
    /// JSONL of cases: {"question_id", "gold_first_error", "predicted_first_error"}.
    #[arg(long, conflicts_with = "scored")]
    cases: Option<PathBuf>,
    /// JSONL of scored cases: {"question_id", "gold_first_error", "step_scores"};
    /// predictions are derived with --threshold.
    #[arg(long)]
    scored: Option<PathBuf>,
    /// Score threshold for deriving error predictions from step scores.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of simulated questions.
    #[arg(long, default_value_t = 50)]
    problems: u32,
    #[arg(long, default_value_t = 8)]
    k: u32,
    #[arg(long, default_value_t = 2)]
    d: u32,
    #[arg(long, default_value_t = 0.75)]
    epsilon: f64,
    /// Positive-policy confidence threshold.
    #[arg(long, default_value_t = 0.75)]
    threshold: f64,
    #[arg(long = "n-responses", default_value_t = 16)]
    n_responses: u32,
    /// Completer capability knob.
    #[arg(long = "p-solve", default_value_t = 0.6)]
    p_solve: f64,
    /// Completer correction knob.
    #[arg(long = "p-fix", default_value_t = 0.3)]
    p_fix: f64,
    #[arg(long = "steps-min", default_value_t = 4)]
    steps_min: u32,
    #[arg(long = "steps-max", default_value_t = 8)]
    steps_max: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct MergeArgs {
    /// Input dataset files.
    #[arg(long, num_args = 0.., value_delimiter = ',')]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Entry point used by the binary: parse, dispatch, map errors to exit
/// codes (0 success, 1 usage/config, 2 provider failure, 130 interrupted).
pub fn main() -> ExitCode {
    let args: Vec<std::ffi::OsString> = std::env::args_os().collect();
    ExitCode::from(dispatch(args))
}

/// Parse and run; usage errors print the contract and exit 1.
pub fn dispatch(argv: Vec<std::ffi::OsString>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: failed to start runtime: {e}");
            return EXIT_CONFIG;
        }
    };
    match runtime.block_on(run_command(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("provider failure: {0}")]
    Provider(#[from] crate::provider::ProviderError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Provider(_) => EXIT_PROVIDER,
            CliError::Synthesis(SynthesisError::ProviderFailures { .. }) => EXIT_PROVIDER,
            CliError::Synthesis(SynthesisError::Interrupted) => EXIT_INTERRUPTED,
            _ => EXIT_CONFIG,
        }
    }
}

async fn run_command(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synthesize(args) => synthesize(args).await,
        Command::Annotate(args) => annotate_file(args).await,
        Command::Confidence(args) => confidence_run(args).await,
        Command::AnalyzeNoise(args) => analyze_noise(args).await,
        Command::EvalBon(args) => eval_bon(args),
        Command::EvalF1(args) => eval_f1(args),
        Command::Simulate(args) => simulate(args).await,
        Command::Merge(args) => merge(args),
    }
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ArtifactDigest {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    tool_version: String,
    started_at: String,
    finished_at: String,
    artifacts: Vec<ArtifactDigest>,
}

fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok((hex::encode(digest), bytes.len() as u64))
}

/// Digest every artifact and write `manifest.json` atomically. The journal
/// is working state rather than a deliverable, so it is not digested.
fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    started_at: String,
    artifacts: &[PathBuf],
) -> Result<(), CliError> {
    let mut digests = Vec::new();
    for artifact in artifacts {
        if !artifact.exists() {
            continue;
        }
        let (sha256, bytes) = sha256_file(artifact)?;
        let rel = artifact
            .strip_prefix(out_dir)
            .unwrap_or(artifact)
            .display()
            .to_string();
        digests.push(ArtifactDigest { path: rel, sha256, bytes });
    }
    digests.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: now(),
        artifacts: digests,
    };
    let tmp = out_dir.join("manifest.json.tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(&manifest).unwrap())?;
    std::fs::rename(tmp, out_dir.join("manifest.json"))?;
    Ok(())
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn install_ctrl_c(cancel: &CancelFlag) {
    let cancel = cancel.clone();
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            eprintln!("interrupt received; flushing journal and stopping");
            cancel.cancel();
        }
    });
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| {
            CliError::Config(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn check_journal_reuse(out_dir: &Path, resume: bool) -> Result<(), CliError> {
    let journal = out_dir.join("journal.jsonl");
    if journal.exists() && !resume {
        eprintln!(
            "note: reusing existing journal at {} (pass --resume to silence this)",
            journal.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

async fn synthesize(args: SynthesizeArgs) -> Result<(), CliError> {
    let started = now();
    let mut config = SynthesisConfig::load(&args.config)?;

    // Flag precedence: CLI flag > config file > default.
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(d) = args.d {
        config.d = d;
    }
    if let Some(epsilon) = args.epsilon {
        config.epsilon = epsilon;
    }
    if let Some(n) = args.n_responses {
        config.n_responses = n;
    }
    if let Some(out) = args.out {
        config.output_path = out;
    }
    if let Some(provider) = &args.provider {
        config.providers.retain(|p| &p.model_name == provider);
        if config.providers.is_empty() {
            return Err(CliError::Config(format!("no provider named `{provider}` in config")));
        }
    }
    if let Some(endpoint) = &args.endpoint {
        for p in &mut config.providers {
            p.endpoint_url = endpoint.clone();
        }
    }
    if let Some(model) = &args.model {
        for p in &mut config.providers {
            p.model_name = model.clone();
        }
    }
    config.validate()?;
    check_journal_reuse(&config.output_path, args.resume)?;

    let providers = build_http_providers(&config)?;
    let cancel = CancelFlag::new();
    install_ctrl_c(&cancel);
    let outcome = run_synthesis_with_providers(&config, &providers, &cancel).await?;

    println!(
        "emitted {} samples ({} positives, {} annotated; {} rollouts)",
        outcome.budget.emitted_samples,
        outcome.budget.positives_without_annotation,
        outcome.budget.annotated_responses,
        outcome.budget.rollout_calls
    );
    let out_dir = config.output_path.clone();
    write_manifest(
        &out_dir,
        "synthesize",
        serde_json::to_value(&config).unwrap(),
        Some(config.seed),
        started,
        &[
            out_dir.join("dataset.jsonl"),
            out_dir.join("budget_report.json"),
            out_dir.join("skips.jsonl"),
            out_dir.join("sc_cache.jsonl"),
        ],
    )
}

#[derive(serde::Deserialize)]
struct ResponseFileLine {
    question_id: String,
    steps: Vec<String>,
}

#[derive(Serialize)]
struct AnnotationOutLine {
    question_id: String,
    response_idx: u32,
    k: u32,
    scores: Vec<f64>,
    first_zero: ErrorLocation,
}

async fn annotate_file(args: AnnotateArgs) -> Result<(), CliError> {
    use crate::annotate::annotate_response_with;
    use crate::journal::{Journal, JournalRecord};
    use crate::model::{Response, Step, Verdict};

    let started = now();
    std::fs::create_dir_all(&args.out)?;
    check_journal_reuse(&args.out, args.resume)?;
    let questions: Vec<Question> = read_jsonl(&args.questions)?;
    let by_id: HashMap<&str, &Question> =
        questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let rows: Vec<ResponseFileLine> = read_jsonl(&args.responses)?;

    let provider = HttpProvider::new(ProviderConfig {
        endpoint_url: args.endpoint.clone(),
        model_name: args.model.clone(),
        api_key: None,
        max_in_flight: 8,
        request_timeout_ms: 120_000,
        retry: Default::default(),
        default_sampling: SamplingParams::default(),
        native_n: true,
    })?;

    let journal_path = args.out.join("journal.jsonl");
    let replay = Journal::replay(&journal_path)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let journal = Journal::open(&journal_path).map_err(|e| CliError::Config(e.to_string()))?;
    let sampling = SamplingParams::default();

    let mut out_lines = Vec::new();
    for (idx, row) in rows.iter().enumerate() {
        let question = by_id.get(row.question_id.as_str()).ok_or_else(|| {
            CliError::Config(format!("question `{}` not in corpus", row.question_id))
        })?;
        let steps: Vec<Step> = row
            .steps
            .iter()
            .enumerate()
            .map(|(i, t)| Step { index: i as u32 + 1, text: t.clone() })
            .collect();
        let response = Response {
            question_id: row.question_id.clone(),
            steps,
            final_answer: None,
            verdict: Verdict::Incorrect,
            generator_id: "file".to_string(),
            sampling: sampling.clone(),
        };
        let resume = replay.progress(&args.model, &row.question_id, idx as u32).to_vec();
        let model_name = args.model.clone();
        let question_id = row.question_id.clone();
        let journal_ref = &journal;
        let k = args.k;
        let mut sink = move |step: u32, correct: u32, unjudgeable: u32| {
            journal_ref
                .append(&JournalRecord::StepScored {
                    provider: model_name.clone(),
                    question_id: question_id.clone(),
                    response_idx: idx as u32,
                    step,
                    correct,
                    k,
                    unjudgeable,
                })
                .map_err(|e| e.to_string())
        };
        let scores = annotate_response_with(
            question,
            &response,
            args.k,
            &provider,
            &sampling,
            JudgeMode::BoxedMath,
            idx.to_string(),
            &resume,
            Some(&mut sink),
        )
        .await
        .map_err(|e| match e {
            crate::annotate::AnnotateError::Provider(p) => CliError::Provider(p),
            other => CliError::Config(other.to_string()),
        })?;
        out_lines.push(AnnotationOutLine {
            question_id: row.question_id.clone(),
            response_idx: idx as u32,
            k: args.k,
            scores: scores.scores(),
            first_zero: scores.first_zero,
        });
    }

    let scores_path = args.out.join("scores.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&scores_path)?);
    for line in &out_lines {
        writeln!(out, "{}", serde_json::to_string(line).unwrap())?;
    }
    out.flush()?;
    println!("annotated {} responses", out_lines.len());

    write_manifest(
        &args.out,
        "annotate",
        serde_json::json!({
            "responses": args.responses,
            "questions": args.questions,
            "endpoint": args.endpoint,
            "model": args.model,
            "k": args.k,
        }),
        None,
        started,
        &[scores_path],
    )
}

async fn confidence_run(args: ConfidenceArgs) -> Result<(), CliError> {
    let started = now();
    std::fs::create_dir_all(&args.out)?;
    let questions: Vec<Question> = read_jsonl(&args.questions)?;
    let provider = HttpProvider::new(ProviderConfig {
        endpoint_url: args.endpoint.clone(),
        model_name: args.model.clone(),
        api_key: None,
        max_in_flight: 8,
        request_timeout_ms: 120_000,
        retry: Default::default(),
        default_sampling: SamplingParams::default(),
        native_n: true,
    })?;
    let sampling = SamplingParams::default();
    let cache = crate::confidence::ScCache::new();
    for q in &questions {
        let sc = estimate_self_confidence(q, &provider, args.n_responses, &sampling, JudgeMode::BoxedMath)
            .await
            .map_err(|e| match e {
                crate::confidence::ConfidenceError::Provider(p) => CliError::Provider(p),
                other => CliError::Config(other.to_string()),
            })?;
        cache.insert(&sampling, sc);
    }
    let cache_path = args.out.join("sc_cache.jsonl");
    cache.save(&cache_path).map_err(|e| CliError::Config(e.to_string()))?;
    println!("estimated self-confidence for {} questions", questions.len());
    write_manifest(
        &args.out,
        "confidence",
        serde_json::json!({
            "questions": args.questions,
            "endpoint": args.endpoint,
            "model": args.model,
            "n": args.n_responses,
        }),
        None,
        started,
        &[cache_path],
    )
}

async fn analyze_noise(args: AnalyzeNoiseArgs) -> Result<(), CliError> {
    let started = now();
    std::fs::create_dir_all(&args.out)?;
    let mut artifacts = Vec::new();

    let records = match &args.records {
        Some(path) => read_records(path).map_err(|e| CliError::Config(e.to_string()))?,
        None => {
            let worlds: Vec<StudyWorld> = args
                .p_solve
                .iter()
                .map(|&p_solve| StudyWorld {
                    params: SimCompleterParams::new(p_solve, args.p_fix, args.seed),
                    n_questions: args.problems,
                    n_responses: args.n_responses,
                    step_range: (3, 8),
                })
                .collect();
            let records = run_noise_study(&worlds, args.k, &SamplingParams::default())
                .await
                .map_err(|e| CliError::Config(e.to_string()))?;
            let records_path = args.out.join("records.jsonl");
            write_records(&records_path, &records)
                .map_err(|e| CliError::Config(e.to_string()))?;
            artifacts.push(records_path);
            records
        }
    };

    let report = distribution_report(&records).map_err(|e| CliError::Config(e.to_string()))?;
    write_report_files(&report, &args.out, args.svg)
        .map_err(|e| CliError::Config(e.to_string()))?;
    for name in ["bucket_category.csv", "noisy_positive_rate.csv", "deviation_hist.csv"] {
        artifacts.push(args.out.join(name));
    }
    if args.svg {
        for name in ["bucket_category.svg", "noisy_positive_rate.svg", "deviation_hist.svg"] {
            artifacts.push(args.out.join(name));
        }
    }
    println!("analyzed {} records", report.total);

    write_manifest(
        &args.out,
        "analyze-noise",
        serde_json::json!({
            "records": args.records,
            "seed": args.seed,
            "p_solve": args.p_solve,
            "p_fix": args.p_fix,
            "problems": args.problems,
            "n_responses": args.n_responses,
            "k": args.k,
            "svg": args.svg,
        }),
        Some(args.seed),
        started,
        &artifacts,
    )
}

fn eval_bon(args: EvalBonArgs) -> Result<(), CliError> {
    let started = now();
    std::fs::create_dir_all(&args.out)?;
    let questions: Vec<Question> = read_jsonl(&args.questions)?;
    let gold: HashMap<&str, &str> = questions
        .iter()
        .map(|q| (q.id.as_str(), q.gold_answer.as_str()))
        .collect();
    let candidates: Vec<ScoredResponse> = read_jsonl(&args.candidates)?;

    let mut by_question: std::collections::BTreeMap<&str, Vec<&ScoredResponse>> =
        Default::default();
    for c in &candidates {
        by_question.entry(c.question_id.as_str()).or_default().push(c);
    }

    let csv_path = args.out.join("bon_accuracy.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(out, "method,accuracy")?;
    for method in SelectionMethod::ALL {
        let acc = judge_selection_accuracy(&by_question, &gold, method)
            .map_err(|e| CliError::Config(e.to_string()))?;
        // Percent convention, one decimal; computed in full precision.
        writeln!(out, "{},{:.1}", method.name(), acc * 100.0)?;
        println!("{:<14} {:.1}", method.name(), acc * 100.0);
    }
    out.flush()?;

    write_manifest(
        &args.out,
        "eval-bon",
        serde_json::json!({ "candidates": args.candidates, "questions": args.questions }),
        None,
        started,
        &[csv_path],
    )
}

#[derive(serde::Deserialize)]
struct ScoredCaseLine {
    question_id: String,
    gold_first_error: ErrorLocation,
    step_scores: Vec<f64>,
}

fn eval_f1(args: EvalF1Args) -> Result<(), CliError> {
    let started = now();
    std::fs::create_dir_all(&args.out)?;
    let cases: Vec<EvalCase> = match (&args.cases, &args.scored) {
        (Some(path), None) => read_jsonl(path)?,
        (None, Some(path)) => {
            let rows: Vec<ScoredCaseLine> = read_jsonl(path)?;
            rows.into_iter()
                .map(|row| {
                    let predicted =
                        predict_first_error_from_scores(&row.step_scores, args.threshold)
                            .map_err(|e| CliError::Config(e.to_string()))?;
                    Ok(EvalCase {
                        question_id: row.question_id,
                        gold_first_error: row.gold_first_error,
                        predicted_first_error: predicted,
                    })
                })
                .collect::<Result<_, CliError>>()?
        }
        _ => {
            return Err(CliError::Config(
                "exactly one of --cases or --scored is required".into(),
            ))
        }
    };
    let report = first_error_f1(&cases);
    let csv_path = args.out.join("f1.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(out, "error_acc,correct_acc,f1")?;
    writeln!(
        out,
        "{:.1},{:.1},{:.1}",
        report.error_acc * 100.0,
        report.correct_acc * 100.0,
        report.f1 * 100.0
    )?;
    out.flush()?;
    println!(
        "error_acc {:.1}  correct_acc {:.1}  f1 {:.1}{}",
        report.error_acc * 100.0,
        report.correct_acc * 100.0,
        report.f1 * 100.0,
        if report.degenerate { "  (degenerate: one side has no cases)" } else { "" }
    );
    write_manifest(
        &args.out,
        "eval-f1",
        serde_json::json!({
            "cases": args.cases,
            "scored": args.scored,
            "threshold": args.threshold,
        }),
        None,
        started,
        &[csv_path],
    )
}

async fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let started = now();
    std::fs::create_dir_all(&args.out)?;
    check_journal_reuse(&args.out, args.resume)?;
    if args.steps_min == 0 || args.steps_max < args.steps_min {
        return Err(CliError::Config("invalid step range".into()));
    }

    let world = Arc::new(
        gen_world(args.seed, args.problems, 1, (args.steps_min, args.steps_max), 0.5)
            .map_err(|e| CliError::Config(e.to_string()))?,
    );
    let world_path = args.out.join("world.json");
    world.save(&world_path).map_err(|e| CliError::Config(e.to_string()))?;

    let config = SynthesisConfig {
        corpus: world.questions(),
        n_responses: args.n_responses,
        generation_sampling: SamplingParams::default(),
        rollout_sampling: SamplingParams::default(),
        k: args.k,
        d: args.d,
        epsilon: args.epsilon,
        positive_policy: crate::synthesis::PositivePolicy::HighConfidenceOnly {
            threshold: args.threshold,
        },
        reweight: true,
        judge_mode: JudgeMode::ExactNormalized,
        delimiter: Default::default(),
        providers: Vec::new(),
        output_path: args.out.clone(),
        seed: args.seed,
        noise_tau: 0.5,
        max_concurrent_questions: 1,
    };
    let provider: Arc<dyn RolloutProvider> = Arc::new(SimProvider::new(
        SimCompleterParams::new(args.p_solve, args.p_fix, args.seed),
        world.clone(),
    ));
    let cancel = CancelFlag::new();
    install_ctrl_c(&cancel);
    let outcome = run_synthesis_with_providers(&config, &[provider], &cancel).await?;

    // Ground truth is embedded in the generated step texts, so the run
    // reports its own label noise ratio. Samples truncated before the true
    // error read back as NoError here, which still judges them noisy: their
    // labels always imply a finite (too-early) location in that case.
    let ratio = label_noise_ratio(
        &outcome.samples,
        |s| {
            let steps: Vec<crate::model::Step> = s
                .steps
                .iter()
                .enumerate()
                .map(|(i, t)| crate::model::Step { index: i as u32 + 1, text: t.clone() })
                .collect();
            Some(true_error_from_steps(&steps))
        },
        config.noise_tau,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let ratio_path = args.out.join("noise_ratio.json");
    std::fs::write(
        &ratio_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "tau": config.noise_tau,
            "noise_ratio": ratio,
            "samples": outcome.samples.len(),
        }))
        .unwrap(),
    )?;

    println!(
        "simulated pipeline: {} samples emitted, {} rollouts, noise ratio {:.4}",
        outcome.budget.emitted_samples, outcome.budget.rollout_calls, ratio
    );

    write_manifest(
        &args.out,
        "simulate",
        serde_json::json!({
            "seed": args.seed,
            "problems": args.problems,
            "k": args.k,
            "d": args.d,
            "epsilon": args.epsilon,
            "threshold": args.threshold,
            "n_responses": args.n_responses,
            "p_solve": args.p_solve,
            "p_fix": args.p_fix,
        }),
        Some(args.seed),
        started,
        &[
            world_path,
            args.out.join("dataset.jsonl"),
            args.out.join("budget_report.json"),
            args.out.join("skips.jsonl"),
            args.out.join("sc_cache.jsonl"),
            ratio_path,
        ],
    )
}

fn merge(args: MergeArgs) -> Result<(), CliError> {
    let started = now();
    let out_dir = args.out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let count = merge_datasets(&args.inputs, &args.out)?;
    println!("merged {} samples into {}", count, args.out.display());
    write_manifest(
        &out_dir,
        "merge",
        serde_json::json!({ "inputs": args.inputs, "out": args.out }),
        None,
        started,
        std::slice::from_ref(&args.out),
    )
}
