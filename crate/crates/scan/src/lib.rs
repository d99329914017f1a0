//! Self-denoising Monte Carlo annotation for process reward data.
//!
//! The crate covers the full data path: sampling candidate solutions from a
//! rollout provider, estimating per-question self-confidence, step-wise
//! Monte Carlo correctness scoring with early stop, confidence-reweighted
//! noise-tolerant labeling, end-to-end synthesis with a crash-safe journal,
//! noise-distribution analysis against ground truth, and best-of-N /
//! first-error-F1 evaluation. A seeded simulator with known step
//! correctness backs every statistical claim with an executable oracle.
//!
//! Start from the `examples/` directory: each example exercises one major
//! capability end to end. The `scan` binary exposes the same flows as
//! subcommands for config-driven runs.

pub mod annotate;
pub mod chart;
pub mod cli;
pub mod confidence;
pub mod denoise;
pub mod evalkit;
pub mod journal;
pub mod model;
pub mod noise;
pub mod provider;
pub mod simworld;
pub mod synthesis;

pub use annotate::{annotate_response, score_step, StepScoreVector};
pub use confidence::{bucket, estimate_self_confidence, ConfidenceBucket, ScCache, SelfConfidence};
pub use denoise::{bce_loss, compute_labels, label_noise_ratio, LabelKind, TrainingSample};
pub use evalkit::{
    aggregate, first_error_f1, predict_first_error_from_scores, select_best_of_n, Aggregation,
    EvalCase, F1Report, ScoredResponse, SelectionMethod,
};
pub use model::{
    judge_answer, split_steps, DelimiterPolicy, ErrorLocation, JudgeMode, Question, Response,
    SamplingParams, Step, Verdict,
};
pub use noise::{classify, distribution_report, run_noise_study, NoiseCategory, NoiseRecord};
pub use provider::{
    Completion, CompletionRequest, CountingProvider, HttpProvider, ProviderConfig, ProviderError,
    RolloutProvider,
};
pub use simworld::{gen_world, sim_rollout_success_prob, SimCompleterParams, SimProvider, SimWorld};
pub use synthesis::{
    merge_datasets, run_synthesis_with_providers, BudgetReport, PositivePolicy, SynthesisConfig,
    SynthesisOutcome,
};
