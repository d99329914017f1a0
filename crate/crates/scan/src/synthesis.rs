//! End-to-end dataset synthesis: generate responses, derive self-confidence
//! from the same pool, emit high-confidence positives directly, annotate
//! selected negatives step-wise, label, and write the dataset with budget
//! accounting. Progress is journaled so interrupted runs resume without
//! repeating work, and rollouts are spent exclusively on negatives so every
//! annotated response reaches the output.

use crate::annotate::{annotate_response_with, AnnotateError, StepScoreVector};
use crate::confidence::{ScCache, SelfConfidence};
use crate::denoise::{compute_labels_with, LabelError, LabelOptions, TrainingSample};
use crate::journal::{Journal, JournalError, JournalRecord};
use crate::model::{
    DelimiterPolicy, JudgeMode, ModelError, Question, Response, SamplingParams, Verdict,
};
use crate::provider::{
    CompletionRequest, HttpProvider, ProviderConfig, ProviderError, RolloutProvider,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} unit(s) failed; journal retains completed work (first error: {first})")]
    ProviderFailures { failed: usize, first: String },
    #[error("run interrupted; journal retains completed work")]
    Interrupted,
    #[error("dataset schema mismatch: expected {expected}, found {found} in {path}")]
    SchemaMismatch { expected: u32, found: u32, path: String },
    #[error("duplicate sample key (provider={provider}, question={question}, response={response})")]
    DuplicateKey { provider: String, question: String, response: u32 },
    #[error("bad dataset line in {path}: {error}")]
    BadDatasetLine { path: String, error: String },
}

/// Which fully correct responses are emitted as positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivePolicy {
    HighConfidenceOnly { threshold: f64 },
}

impl Default for PositivePolicy {
    fn default() -> Self {
        PositivePolicy::HighConfidenceOnly { threshold: 0.75 }
    }
}

fn default_epsilon() -> f64 {
    0.75
}
fn default_k() -> u32 {
    8
}
fn default_d() -> u32 {
    2
}
fn default_n_responses() -> u32 {
    64
}
fn default_true() -> bool {
    true
}
fn default_tau() -> f64 {
    0.5
}
fn default_concurrency() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub corpus: Vec<Question>,
    #[serde(default = "default_n_responses")]
    pub n_responses: u32,
    #[serde(default)]
    pub generation_sampling: SamplingParams,
    #[serde(default)]
    pub rollout_sampling: SamplingParams,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_d")]
    pub d: u32,
    /// Negatives are annotated only when their question's self-confidence
    /// strictly exceeds this threshold.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub positive_policy: PositivePolicy,
    /// Disable to keep soft labels at the raw score (ablation toggle).
    #[serde(default = "default_true")]
    pub reweight: bool,
    #[serde(default = "default_judge_mode")]
    pub judge_mode: JudgeMode,
    #[serde(default)]
    pub delimiter: DelimiterPolicy,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    pub output_path: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Threshold for reading an implied error location back out of labels
    /// in noise-ratio reports.
    #[serde(default = "default_tau")]
    pub noise_tau: f64,
    /// Question-level units processed at once. The default of 1 keeps the
    /// journal byte-reproducible; higher values trade that for throughput.
    #[serde(default = "default_concurrency")]
    pub max_concurrent_questions: usize,
}

fn default_judge_mode() -> JudgeMode {
    JudgeMode::BoxedMath
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.corpus.is_empty() {
            return Err(SynthesisError::ConfigInvalid("corpus is empty".into()));
        }
        for q in &self.corpus {
            q.validate()
                .map_err(|e| SynthesisError::ConfigInvalid(e.to_string()))?;
        }
        let mut ids = BTreeSet::new();
        for q in &self.corpus {
            if !ids.insert(&q.id) {
                return Err(SynthesisError::ConfigInvalid(format!("duplicate question id `{}`", q.id)));
            }
        }
        if self.n_responses < 1 {
            return Err(SynthesisError::ConfigInvalid("n_responses must be >= 1".into()));
        }
        if self.k < 1 {
            return Err(SynthesisError::ConfigInvalid("k must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(SynthesisError::ConfigInvalid("epsilon must be in [0, 1)".into()));
        }
        let PositivePolicy::HighConfidenceOnly { threshold } = self.positive_policy;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(SynthesisError::ConfigInvalid("positive threshold must be in [0, 1]".into()));
        }
        if self.max_concurrent_questions == 0 {
            return Err(SynthesisError::ConfigInvalid("max_concurrent_questions must be >= 1".into()));
        }
        for (name, sampling) in [
            ("generation_sampling", &self.generation_sampling),
            ("rollout_sampling", &self.rollout_sampling),
        ] {
            sampling
                .validate()
                .map_err(|e| SynthesisError::ConfigInvalid(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthesisError> {
        let raw = std::fs::read_to_string(path)?;
        let config: SynthesisConfig = serde_json::from_str(&raw)
            .map_err(|e| SynthesisError::ConfigInvalid(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }
}

/// Exact accounting of every sampling call the run spent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub generated_completions: u64,
    /// Completions drawn solely for self-confidence estimation. Zero here:
    /// the pipeline reuses the generation pool.
    pub sc_samples: u64,
    /// Total rollouts: `k * annotated_steps` summed over annotated
    /// responses. Positives never contribute.
    pub rollout_calls: u64,
    pub annotated_responses: u64,
    pub emitted_samples: u64,
    pub skipped_low_sc: u64,
    pub skipped_unjudgeable: u64,
    pub positives_without_annotation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Correct response below the positive-policy confidence threshold.
    LowConfidencePositive,
    /// Incorrect response at or below the epsilon selection threshold.
    LowConfidenceNegative,
    /// No final answer could be extracted.
    Unjudgeable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub provider_id: String,
    pub question_id: String,
    pub response_idx: u32,
    pub reason: SkipReason,
}

/// Result of a synthesis run.
pub struct SynthesisOutcome {
    pub dataset_path: PathBuf,
    pub budget: BudgetReport,
    pub samples: Vec<TrainingSample>,
    pub skips: Vec<SkipRecord>,
}

/// Cooperative cancellation flag checked between units.
#[derive(Clone, Default)]
pub struct CancelFlag(Arc<AtomicBool>);

impl CancelFlag {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }
    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Build HTTP providers from the config's provider list.
pub fn build_http_providers(
    config: &SynthesisConfig,
) -> Result<Vec<Arc<dyn RolloutProvider>>, ProviderError> {
    config
        .providers
        .iter()
        .map(|p| {
            HttpProvider::new(p.clone()).map(|h| Arc::new(h) as Arc<dyn RolloutProvider>)
        })
        .collect()
}

enum Disposition {
    Positive,
    Annotated(StepScoreVector),
    Skipped(SkipReason),
}

struct UnitResult {
    provider_id: String,
    question_id: String,
    sc: SelfConfidence,
    responses: Vec<Response>,
    dispositions: Vec<Disposition>,
}

/// Process one (provider, question) unit: generate (or replay), judge,
/// select, and annotate.
async fn run_unit(
    config: &SynthesisConfig,
    provider: &dyn RolloutProvider,
    question: &Question,
    journal: &Journal,
    replayed_generation: Option<(Vec<crate::provider::Completion>, u32, u32)>,
    progress: &BTreeMap<u32, Vec<u32>>,
) -> Result<UnitResult, AnnotateError> {
    let provider_id = provider.id().to_string();

    let (completions, sc_correct, sc_n) = match replayed_generation {
        Some(done) => done,
        None => {
            let req = CompletionRequest {
                question: question.clone(),
                prefix_steps: Vec::new(),
                n_samples: config.n_responses,
                sampling: config.generation_sampling.clone(),
                seed: Some(config.seed),
            };
            let completions = provider.sample_completions(&req).await?;
            let mut correct = 0u32;
            for c in &completions {
                let response = Response::from_text(
                    question,
                    &c.text,
                    &provider_id,
                    config.generation_sampling.clone(),
                    config.judge_mode,
                    &config.delimiter,
                );
                if matches!(response.map(|r| r.verdict), Ok(Verdict::Correct)) {
                    correct += 1;
                }
            }
            let n = completions.len() as u32;
            journal
                .append(&JournalRecord::Generated {
                    provider: provider_id.clone(),
                    question_id: question.id.clone(),
                    completions: completions.clone(),
                    sc_correct: correct,
                    sc_n: n,
                })
                .map_err(|e| AnnotateError::Journal(e.to_string()))?;
            (completions, correct, n)
        }
    };

    let sc = SelfConfidence {
        question_id: question.id.clone(),
        provider_id: provider_id.clone(),
        n_samples: sc_n.max(1),
        correct: sc_correct,
        all_unjudgeable: false,
    };

    let mut responses = Vec::with_capacity(completions.len());
    let mut dispositions = Vec::with_capacity(completions.len());
    let PositivePolicy::HighConfidenceOnly { threshold } = config.positive_policy;

    for (idx, completion) in completions.iter().enumerate() {
        let response = match Response::from_text(
            question,
            &completion.text,
            &provider_id,
            config.generation_sampling.clone(),
            config.judge_mode,
            &config.delimiter,
        ) {
            Ok(r) => r,
            Err(_) => {
                // Unsegmentable text: treat like an unjudgeable response.
                responses.push(Response {
                    question_id: question.id.clone(),
                    steps: Vec::new(),
                    final_answer: None,
                    verdict: Verdict::Unjudgeable,
                    generator_id: provider_id.clone(),
                    sampling: config.generation_sampling.clone(),
                });
                dispositions.push(Disposition::Skipped(SkipReason::Unjudgeable));
                continue;
            }
        };

        let disposition = match response.verdict {
            Verdict::Correct if sc.value() >= threshold => Disposition::Positive,
            Verdict::Correct => Disposition::Skipped(SkipReason::LowConfidencePositive),
            Verdict::Unjudgeable => Disposition::Skipped(SkipReason::Unjudgeable),
            Verdict::Incorrect if sc.value() > config.epsilon && sc.correct > 0 => {
                let resume = progress.get(&(idx as u32)).cloned().unwrap_or_default();
                let journal_ref = journal;
                let provider_id_ref = &provider_id;
                let question_id = question.id.clone();
                let mut sink = move |step: u32, correct: u32, unjudgeable: u32| {
                    journal_ref
                        .append(&JournalRecord::StepScored {
                            provider: provider_id_ref.clone(),
                            question_id: question_id.clone(),
                            response_idx: idx as u32,
                            step,
                            correct,
                            k: config.k,
                            unjudgeable,
                        })
                        .map_err(|e| e.to_string())
                };
                let scores = annotate_response_with(
                    question,
                    &response,
                    config.k,
                    provider,
                    &config.rollout_sampling,
                    config.judge_mode,
                    idx.to_string(),
                    &resume,
                    Some(&mut sink),
                )
                .await?;
                Disposition::Annotated(scores)
            }
            Verdict::Incorrect => Disposition::Skipped(SkipReason::LowConfidenceNegative),
        };
        responses.push(response);
        dispositions.push(disposition);
    }

    Ok(UnitResult {
        provider_id,
        question_id: question.id.clone(),
        sc,
        responses,
        dispositions,
    })
}

/// Run the full pipeline against pre-built providers. Question-level units
/// run with bounded concurrency; output ordering is independent of
/// completion order.
pub async fn run_synthesis_with_providers(
    config: &SynthesisConfig,
    providers: &[Arc<dyn RolloutProvider>],
    cancel: &CancelFlag,
) -> Result<SynthesisOutcome, SynthesisError> {
    config.validate()?;
    if providers.is_empty() {
        return Err(SynthesisError::ConfigInvalid("no providers".into()));
    }
    std::fs::create_dir_all(&config.output_path)?;
    let journal_path = config.output_path.join("journal.jsonl");
    let replay = Journal::replay(&journal_path)?;
    let journal = Journal::open(&journal_path)?;

    // Deterministic unit order: by provider id, then question id.
    let mut units: Vec<(usize, usize)> = (0..providers.len())
        .flat_map(|pi| (0..config.corpus.len()).map(move |qi| (pi, qi)))
        .collect();
    units.sort_by(|a, b| {
        (providers[a.0].id(), &config.corpus[a.1].id)
            .cmp(&(providers[b.0].id(), &config.corpus[b.1].id))
    });

    let mut results: Vec<UnitResult> = Vec::with_capacity(units.len());
    let mut failures: Vec<String> = Vec::new();
    let mut interrupted = false;
    let journal_ref = &journal;

    for chunk in units.chunks(config.max_concurrent_questions.max(1)) {
        if cancel.is_cancelled() {
            interrupted = true;
            break;
        }
        let mut futs = Vec::with_capacity(chunk.len());
        for &(pi, qi) in chunk {
            let provider = providers[pi].clone();
            let question = &config.corpus[qi];
            let replayed = replay.generation(provider.id(), &question.id).cloned();
            let progress: BTreeMap<u32, Vec<u32>> = replay
                .annotation
                .iter()
                .filter(|((p, q, _), _)| p == provider.id() && q == &question.id)
                .map(|((_, _, idx), prog)| (*idx, prog.counts.clone()))
                .collect();
            futs.push(async move {
                run_unit(config, provider.as_ref(), question, journal_ref, replayed, &progress)
                    .await
            });
        }
        for outcome in futures::future::join_all(futs).await {
            match outcome {
                Ok(unit) => results.push(unit),
                Err(e) => failures.push(e.to_string()),
            }
        }
    }

    if interrupted {
        return Err(SynthesisError::Interrupted);
    }
    if !failures.is_empty() {
        return Err(SynthesisError::ProviderFailures {
            failed: failures.len(),
            first: failures.remove(0),
        });
    }

    // Deterministic emission independent of unit completion order.
    results.sort_by(|a, b| (&a.provider_id, &a.question_id).cmp(&(&b.provider_id, &b.question_id)));

    let mut budget = BudgetReport::default();
    let mut samples: Vec<TrainingSample> = Vec::new();
    let mut skips: Vec<SkipRecord> = Vec::new();
    let sc_cache = ScCache::new();
    let opts = LabelOptions { d: config.d, reweight: config.reweight };

    for unit in &results {
        budget.generated_completions += unit.responses.len() as u64;
        sc_cache.insert(&config.generation_sampling, unit.sc.clone());
        for (idx, disposition) in unit.dispositions.iter().enumerate() {
            let idx_u32 = idx as u32;
            match disposition {
                Disposition::Positive => {
                    budget.positives_without_annotation += 1;
                    samples.push(TrainingSample::positive(
                        &unit.question_id,
                        &unit.responses[idx].steps,
                        &unit.sc,
                        config.k,
                        config.d,
                        config.generation_sampling.clone(),
                        idx_u32,
                    ));
                }
                Disposition::Annotated(scores) => {
                    budget.annotated_responses += 1;
                    budget.rollout_calls += scores.rollouts_used();
                    samples.push(compute_labels_with(
                        scores,
                        &unit.responses[idx].steps,
                        &unit.sc,
                        opts,
                        idx_u32,
                        config.rollout_sampling.clone(),
                    )?);
                }
                Disposition::Skipped(reason) => {
                    match reason {
                        SkipReason::Unjudgeable => budget.skipped_unjudgeable += 1,
                        _ => budget.skipped_low_sc += 1,
                    }
                    skips.push(SkipRecord {
                        provider_id: unit.provider_id.clone(),
                        question_id: unit.question_id.clone(),
                        response_idx: idx_u32,
                        reason: *reason,
                    });
                }
            }
        }
    }
    budget.emitted_samples = samples.len() as u64;

    samples.sort_by(|a, b| {
        (&a.provider_id, &a.question_id, a.response_idx)
            .cmp(&(&b.provider_id, &b.question_id, b.response_idx))
    });
    skips.sort_by(|a, b| {
        (&a.provider_id, &a.question_id, a.response_idx)
            .cmp(&(&b.provider_id, &b.question_id, b.response_idx))
    });

    let dataset_path = config.output_path.join("dataset.jsonl");
    write_dataset(&dataset_path, &samples)?;
    write_jsonl(&config.output_path.join("skips.jsonl"), &skips)?;
    std::fs::write(
        config.output_path.join("budget_report.json"),
        serde_json::to_string_pretty(&budget).unwrap(),
    )?;
    sc_cache
        .save(&config.output_path.join("sc_cache.jsonl"))
        .map_err(|e| SynthesisError::ConfigInvalid(e.to_string()))?;

    Ok(SynthesisOutcome { dataset_path, budget, samples, skips })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SynthesisError> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for row in rows {
            writeln!(out, "{}", serde_json::to_string(row).unwrap())?;
        }
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_dataset(path: &Path, samples: &[TrainingSample]) -> Result<(), SynthesisError> {
    write_jsonl(path, samples)
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrainingSample>, SynthesisError> {
    let file = std::fs::File::open(path)?;
    let mut samples = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: TrainingSample =
            serde_json::from_str(&line).map_err(|e| SynthesisError::BadDatasetLine {
                path: path.display().to_string(),
                error: e.to_string(),
            })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Concatenate datasets with stable ordering (provider, question, response
/// index). Duplicate keys and mixed schema versions are rejected; an empty
/// input list yields an empty dataset.
pub fn merge_datasets(inputs: &[PathBuf], output: &Path) -> Result<u64, SynthesisError> {
    let mut all: Vec<TrainingSample> = Vec::new();
    let mut version: Option<u32> = None;
    for input in inputs {
        for sample in read_dataset(input)? {
            match version {
                None => version = Some(sample.schema_version),
                Some(v) if v != sample.schema_version => {
                    return Err(SynthesisError::SchemaMismatch {
                        expected: v,
                        found: sample.schema_version,
                        path: input.display().to_string(),
                    });
                }
                _ => {}
            }
            all.push(sample);
        }
    }
    let mut seen = BTreeSet::new();
    for s in &all {
        if !seen.insert(s.key()) {
            return Err(SynthesisError::DuplicateKey {
                provider: s.provider_id.clone(),
                question: s.question_id.clone(),
                response: s.response_idx,
            });
        }
    }
    all.sort_by_key(|a| a.key());
    write_dataset(output, &all)?;
    Ok(all.len() as u64)
}
