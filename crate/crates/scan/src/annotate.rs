//! Step-wise Monte Carlo correctness scoring with early stop.
//!
//! Steps are scored sequentially; each step's score is the fraction of `k`
//! rollouts from the prefix ending at that step that reach the gold answer.
//! Annotation stops immediately after the first zero-score step, so the
//! rollout budget for a response is exactly `k * annotated_steps`.

use crate::model::{
    extract_final_answer, judge_answer, ErrorLocation, JudgeMode, Question, Response,
    SamplingParams, Step,
};
use crate::provider::{CompletionRequest, ProviderError, RolloutProvider};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("journal callback failed: {0}")]
    Journal(String),
    #[error("resume state is not a contiguous prefix of step scores")]
    BadResumeState,
}

/// Scores for the annotated prefix of one response. Scores are stored as
/// correct-rollout counts out of `k`, so every value is an exact multiple
/// of `1/k`. No step beyond the first zero is ever scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScoreVector {
    pub question_id: String,
    /// Stable reference to the response within its run (generation index).
    pub response_ref: String,
    pub k: u32,
    /// Correct-rollout count for steps 1..=annotated_steps().
    pub correct_counts: Vec<u32>,
    pub first_zero: ErrorLocation,
    /// Rollouts whose final answer could not be extracted; counted as
    /// failures, recorded so the rate stays observable.
    pub unjudgeable_rollouts: u32,
}

impl StepScoreVector {
    pub fn annotated_steps(&self) -> u32 {
        self.correct_counts.len() as u32
    }

    /// Score of step `t` (1-based) as a fraction.
    pub fn score(&self, t: u32) -> Option<f64> {
        self.correct_counts
            .get(t as usize - 1)
            .map(|c| *c as f64 / self.k as f64)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.correct_counts.iter().map(|c| *c as f64 / self.k as f64).collect()
    }

    pub fn rollouts_used(&self) -> u64 {
        self.k as u64 * self.annotated_steps() as u64
    }

    /// Check the early-stop invariants: every score before the first zero
    /// is positive, and nothing was scored past it.
    pub fn validate(&self, total_steps: u32) -> bool {
        match self.first_zero {
            ErrorLocation::AtStep(m) => {
                self.annotated_steps() == m
                    && self.correct_counts.last() == Some(&0)
                    && self.correct_counts[..m as usize - 1].iter().all(|c| *c > 0)
            }
            ErrorLocation::NoError => {
                self.annotated_steps() == total_steps
                    && self.correct_counts.iter().all(|c| *c > 0)
            }
        }
    }
}

/// Judge one rollout completion. Unjudgeable completions count as failures.
fn judge_rollout(text: &str, gold: &str, mode: JudgeMode) -> (bool, bool) {
    match extract_final_answer(text, mode) {
        Some(ans) => (judge_answer(&ans, gold, JudgeMode::ExactNormalized), true),
        None => (false, false),
    }
}

/// Score a single step: `k` rollouts from the prefix, returning the number
/// judged correct and the number that were unjudgeable.
pub async fn score_step(
    question: &Question,
    prefix: &[Step],
    k: u32,
    provider: &dyn RolloutProvider,
    sampling: &SamplingParams,
    mode: JudgeMode,
) -> Result<(u32, u32), AnnotateError> {
    let req = CompletionRequest {
        question: question.clone(),
        prefix_steps: prefix.to_vec(),
        n_samples: k,
        sampling: sampling.clone(),
        seed: None,
    };
    let completions = provider.sample_completions(&req).await?;
    let mut correct = 0u32;
    let mut unjudgeable = 0u32;
    for c in &completions {
        let (ok, judgeable) = judge_rollout(&c.text, &question.gold_answer, mode);
        if ok {
            correct += 1;
        }
        if !judgeable {
            unjudgeable += 1;
        }
    }
    Ok((correct, unjudgeable))
}

/// Per-step progress callback; invoked after each newly scored step so the
/// caller can journal it before the next step runs.
pub type StepSink<'a> = &'a mut dyn FnMut(u32, u32, u32) -> Result<(), String>;

/// Annotate a response sequentially, stopping after the first zero-score
/// step. `resume` supplies already-scored counts for a contiguous step
/// prefix (from a journal); those steps are not re-rolled.
///
/// The synthesis pipeline only calls this for incorrect-verdict responses;
/// callers that annotate other responses (e.g. the noise study) do so
/// deliberately.
#[allow(clippy::too_many_arguments)]
pub async fn annotate_response_with(
    question: &Question,
    response: &Response,
    k: u32,
    provider: &dyn RolloutProvider,
    sampling: &SamplingParams,
    mode: JudgeMode,
    response_ref: String,
    resume: &[u32],
    mut on_step: Option<StepSink<'_>>,
) -> Result<StepScoreVector, AnnotateError> {
    let n = response.steps.len() as u32;
    if resume.len() as u32 > n {
        return Err(AnnotateError::BadResumeState);
    }
    let mut counts: Vec<u32> = resume.to_vec();
    let mut unjudgeable = 0u32;
    if counts[..counts.len().saturating_sub(1)].contains(&0) {
        return Err(AnnotateError::BadResumeState);
    }

    let mut first_zero = None;
    if counts.last() == Some(&0) {
        first_zero = Some(counts.len() as u32);
    }

    if first_zero.is_none() {
        for t in counts.len() as u32 + 1..=n {
            let prefix = &response.steps[..t as usize];
            let (correct, unj) = score_step(question, prefix, k, provider, sampling, mode).await?;
            counts.push(correct);
            unjudgeable += unj;
            if let Some(sink) = on_step.as_mut() {
                sink(t, correct, unj).map_err(AnnotateError::Journal)?;
            }
            if correct == 0 {
                first_zero = Some(t);
                break;
            }
        }
    }

    let first_zero = match first_zero {
        Some(m) => ErrorLocation::AtStep(m),
        None => ErrorLocation::NoError,
    };
    Ok(StepScoreVector {
        question_id: question.id.clone(),
        response_ref,
        k,
        correct_counts: counts,
        first_zero,
        unjudgeable_rollouts: unjudgeable,
    })
}

/// Annotate from scratch without journaling.
pub async fn annotate_response(
    question: &Question,
    response: &Response,
    k: u32,
    provider: &dyn RolloutProvider,
    sampling: &SamplingParams,
    mode: JudgeMode,
) -> Result<StepScoreVector, AnnotateError> {
    annotate_response_with(
        question,
        response,
        k,
        provider,
        sampling,
        mode,
        String::new(),
        &[],
        None,
    )
    .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DelimiterPolicy, Verdict};
    use crate::provider::{Completion, CountingProvider, FinishReason};
    use crate::simworld::{gen_world, SimCompleterParams, SimProvider, SimWorld};
    use async_trait::async_trait;
    use std::sync::Arc;

    /// Scripted provider: replies with a fixed success count per prefix
    /// length, so score trajectories can be pinned exactly.
    struct ScriptedProvider {
        gold: String,
        counts_by_prefix_len: Vec<u32>,
        k: u32,
    }

    #[async_trait]
    impl RolloutProvider for ScriptedProvider {
        fn id(&self) -> &str {
            "scripted"
        }
        async fn sample_completions(
            &self,
            req: &CompletionRequest,
        ) -> Result<Vec<Completion>, ProviderError> {
            let successes = self.counts_by_prefix_len[req.prefix_steps.len() - 1];
            assert_eq!(req.n_samples, self.k);
            Ok((0..req.n_samples)
                .map(|i| Completion {
                    text: if i < successes { self.gold.clone() } else { "0".to_string() },
                    finish_reason: FinishReason::Stop,
                })
                .collect())
        }
    }

    fn fixture(n_steps: usize) -> (Question, Response) {
        let q = Question::new("q1", "prob", "7");
        let text = (1..=n_steps).map(|i| format!("step {i}")).collect::<Vec<_>>().join("\n\n");
        let mut r = Response::from_text(
            &q,
            &text,
            "gen",
            SamplingParams::default(),
            JudgeMode::ExactNormalized,
            &DelimiterPolicy::BlankLine,
        )
        .unwrap();
        r.verdict = Verdict::Incorrect;
        (q, r)
    }

    #[tokio::test]
    async fn early_stop_at_first_zero() {
        let (q, r) = fixture(6);
        let provider = ScriptedProvider {
            gold: "7".into(),
            counts_by_prefix_len: vec![4, 2, 0, 8, 8, 8],
            k: 8,
        };
        let v = annotate_response(&q, &r, 8, &provider, &SamplingParams::default(), JudgeMode::ExactNormalized)
            .await
            .unwrap();
        assert_eq!(v.first_zero, ErrorLocation::AtStep(3));
        assert_eq!(v.annotated_steps(), 3);
        assert_eq!(v.scores(), vec![0.5, 0.25, 0.0]);
        assert_eq!(v.rollouts_used(), 24);
        assert!(v.validate(6));
    }

    #[tokio::test]
    async fn no_error_when_all_steps_nonzero() {
        let (q, r) = fixture(4);
        let provider = ScriptedProvider {
            gold: "7".into(),
            counts_by_prefix_len: vec![8, 5, 3, 1],
            k: 8,
        };
        let v = annotate_response(&q, &r, 8, &provider, &SamplingParams::default(), JudgeMode::ExactNormalized)
            .await
            .unwrap();
        assert_eq!(v.first_zero, ErrorLocation::NoError);
        assert_eq!(v.annotated_steps(), 4);
        assert!(v.validate(4));
    }

    #[tokio::test]
    async fn resume_skips_scored_steps() {
        let (q, r) = fixture(5);
        let provider = ScriptedProvider {
            gold: "7".into(),
            counts_by_prefix_len: vec![99, 99, 4, 0, 8], // first two must not be re-rolled
            k: 8,
        };
        let counting = CountingProvider::new(provider);
        let v = annotate_response_with(
            &q,
            &r,
            8,
            &counting,
            &SamplingParams::default(),
            JudgeMode::ExactNormalized,
            "0".into(),
            &[6, 3],
            None,
        )
        .await
        .unwrap();
        assert_eq!(v.correct_counts, vec![6, 3, 4, 0]);
        assert_eq!(v.first_zero, ErrorLocation::AtStep(4));
        // Only steps 3 and 4 hit the provider.
        assert_eq!(counting.rollout_sample_count(), 16);
    }

    #[tokio::test]
    async fn resume_rejects_non_contiguous_state() {
        let (q, r) = fixture(3);
        let provider = ScriptedProvider { gold: "7".into(), counts_by_prefix_len: vec![1, 1, 1], k: 8 };
        let err = annotate_response_with(
            &q,
            &r,
            8,
            &provider,
            &SamplingParams::default(),
            JudgeMode::ExactNormalized,
            "0".into(),
            &[0, 3],
            None,
        )
        .await;
        assert!(matches!(err, Err(AnnotateError::BadResumeState)));
    }

    #[tokio::test]
    async fn budget_identity_via_counting_provider() {
        let (q, r) = fixture(6);
        let provider = ScriptedProvider {
            gold: "7".into(),
            counts_by_prefix_len: vec![5, 5, 5, 0, 8, 8],
            k: 8,
        };
        let counting = CountingProvider::new(provider);
        let v = annotate_response(&q, &r, 8, &counting, &SamplingParams::default(), JudgeMode::ExactNormalized)
            .await
            .unwrap();
        assert_eq!(counting.rollout_sample_count(), v.rollouts_used());
    }

    fn scripted_response(world: &SimWorld, qi: usize, rj: usize) -> (Question, Response) {
        let p = &world.problems[qi];
        let sr = &p.scripted_responses[rj];
        let r = Response {
            question_id: p.question.id.clone(),
            steps: sr.steps.clone(),
            final_answer: Some(sr.final_answer.clone()),
            verdict: Verdict::Incorrect,
            generator_id: "sim".into(),
            sampling: SamplingParams::default(),
        };
        (p.question.clone(), r)
    }

    // With t_true = 2, p_solve = 0.9 and p_fix = 0, step 1 can only score
    // zero if all 8 rollouts fail (prob 1e-8) and step 2 always scores
    // zero, so nearly every run reports AtStep(2).
    #[tokio::test]
    async fn sim_pins_first_zero_at_true_error() {
        let mut world = gen_world(77, 1000, 1, (4, 6), 1.0).unwrap();
        for p in &mut world.problems {
            for r in &mut p.scripted_responses {
                let n = r.steps.len() as u32;
                let answer = r.final_answer.clone();
                r.t_true = ErrorLocation::AtStep(2);
                r.steps = (1..=n)
                    .map(|i| {
                        let mut text = format!("sim step {i} {}", if i < 2 { "[ok]" } else { "[err]" });
                        if i == n {
                            text.push('\n');
                            text.push_str(&answer);
                        }
                        Step { index: i, text }
                    })
                    .collect();
            }
        }
        let world = Arc::new(world);
        let provider = SimProvider::new(SimCompleterParams::new(0.9, 0.0, 13), world.clone());
        let mut hits = 0u32;
        for qi in 0..world.problems.len() {
            let (q, r) = scripted_response(&world, qi, 0);
            let v = annotate_response(&q, &r, 8, &provider, &SamplingParams::default(), JudgeMode::ExactNormalized)
                .await
                .unwrap();
            if v.first_zero == ErrorLocation::AtStep(2) {
                hits += 1;
            }
        }
        assert!(hits >= 990, "only {hits}/1000 runs stopped at the true error");
    }
}
