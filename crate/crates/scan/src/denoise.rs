//! Noise-tolerant training labels from raw step scores.
//!
//! Within a tolerance window of `d` steps before the detected error, hard
//! labels are replaced by confidence-reweighted soft labels
//! `min(score / self_confidence, 1)`; everything earlier keeps the hard
//! label `1[score > 0]`. With `d = 0` this reduces exactly to hard
//! labeling. Label arithmetic runs on integer counts so exact fractions
//! (e.g. 0.6 / 0.8 = 0.75) stay bit-exact.

use crate::annotate::StepScoreVector;
use crate::confidence::SelfConfidence;
use crate::model::{ErrorLocation, SamplingParams, Step};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SAMPLE_SCHEMA_VERSION: u32 = 1;

/// Epsilon used to clamp predictions away from {0, 1} in the BCE loss.
pub const BCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("self-confidence is zero for question `{0}`; pipeline selection should have skipped it")]
    ZeroConfidence(String),
    #[error("malformed score vector: {0}")]
    MalformedScores(String),
    #[error("labels and predictions differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ground truth missing for sample `{0}`")]
    MissingTruth(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Hard,
    SoftReweighted,
}

/// One emitted training sample: the annotated step prefix (or the full
/// steps of an unannotated positive) with denoised labels and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub question_id: String,
    pub steps: Vec<String>,
    pub labels: Vec<f64>,
    pub label_kinds: Vec<LabelKind>,
    /// Raw per-step scores; empty for positives emitted without annotation.
    pub mc_scores: Vec<f64>,
    pub first_zero: Option<u32>,
    pub sc: f64,
    pub k: u32,
    pub d: u32,
    pub provider_id: String,
    pub sampling: SamplingParams,
    pub schema_version: u32,
    /// Generation index of the response within its (provider, question)
    /// unit; part of the dedupe/ordering key.
    pub response_idx: u32,
}

impl TrainingSample {
    /// An all-correct response emitted directly as a positive example:
    /// every step carries the hard label 1 and no rollouts were spent.
    pub fn positive(
        question_id: impl Into<String>,
        steps: &[Step],
        sc: &SelfConfidence,
        k: u32,
        d: u32,
        sampling: SamplingParams,
        response_idx: u32,
    ) -> Self {
        let n = steps.len();
        Self {
            question_id: question_id.into(),
            steps: steps.iter().map(|s| s.text.clone()).collect(),
            labels: vec![1.0; n],
            label_kinds: vec![LabelKind::Hard; n],
            mc_scores: Vec::new(),
            first_zero: None,
            sc: sc.value(),
            k,
            d,
            provider_id: sc.provider_id.clone(),
            sampling,
            schema_version: SAMPLE_SCHEMA_VERSION,
            response_idx,
        }
    }

    pub fn key(&self) -> (String, String, u32) {
        (self.provider_id.clone(), self.question_id.clone(), self.response_idx)
    }
}

/// Labeling options; `reweight = false` keeps soft labels at the raw score
/// (used by the component-ablation flag).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LabelOptions {
    pub d: u32,
    pub reweight: bool,
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self { d: 2, reweight: true }
    }
}

/// Soft label `min(count/k / sc, 1)` computed on integer counts so exact
/// fractions survive. With reweighting disabled this is just `count/k`.
fn soft_label(count: u32, k: u32, sc: &SelfConfidence, reweight: bool) -> f64 {
    if !reweight {
        return count as f64 / k as f64;
    }
    let num = count as u64 * sc.n_samples as u64;
    let den = k as u64 * sc.correct as u64;
    if num >= den {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Turn a score vector into a training sample.
///
/// For annotated steps `t`: when a first zero exists at `m` and
/// `m - t <= d`, the label is the reweighted soft score; otherwise the hard
/// label `1[score > 0]`. When no zero was found every label is hard (all 1
/// by the early-stop invariant).
pub fn compute_labels_with(
    scores: &StepScoreVector,
    step_texts: &[Step],
    sc: &SelfConfidence,
    opts: LabelOptions,
    response_idx: u32,
    sampling: SamplingParams,
) -> Result<TrainingSample, LabelError> {
    if sc.correct == 0 {
        return Err(LabelError::ZeroConfidence(scores.question_id.clone()));
    }
    let m = scores.annotated_steps() as usize;
    if m == 0 {
        return Err(LabelError::MalformedScores("no annotated steps".into()));
    }
    if step_texts.len() < m {
        return Err(LabelError::MalformedScores(format!(
            "{} step texts for {m} annotated steps",
            step_texts.len()
        )));
    }
    if !scores.validate(step_texts.len() as u32) {
        return Err(LabelError::MalformedScores("early-stop invariant violated".into()));
    }

    let mut labels = Vec::with_capacity(m);
    let mut kinds = Vec::with_capacity(m);
    for (i, &count) in scores.correct_counts.iter().enumerate() {
        let t = i as u32 + 1;
        let in_window = match scores.first_zero {
            ErrorLocation::AtStep(fz) => fz - t <= opts.d,
            ErrorLocation::NoError => false,
        };
        if in_window {
            labels.push(soft_label(count, scores.k, sc, opts.reweight));
            kinds.push(LabelKind::SoftReweighted);
        } else {
            labels.push(if count > 0 { 1.0 } else { 0.0 });
            kinds.push(LabelKind::Hard);
        }
    }

    Ok(TrainingSample {
        question_id: scores.question_id.clone(),
        steps: step_texts[..m].iter().map(|s| s.text.clone()).collect(),
        labels,
        label_kinds: kinds,
        mc_scores: scores.scores(),
        first_zero: scores.first_zero.as_option(),
        sc: sc.value(),
        k: scores.k,
        d: opts.d,
        provider_id: sc.provider_id.clone(),
        sampling,
        schema_version: SAMPLE_SCHEMA_VERSION,
        response_idx,
    })
}

/// Default-option entry point: tolerance window `d` with reweighting on.
pub fn compute_labels(
    scores: &StepScoreVector,
    step_texts: &[Step],
    sc: &SelfConfidence,
    d: u32,
) -> Result<TrainingSample, LabelError> {
    compute_labels_with(
        scores,
        step_texts,
        sc,
        LabelOptions { d, reweight: true },
        0,
        SamplingParams::default(),
    )
}

/// Mean binary cross-entropy over steps. Predictions are clamped to
/// `[BCE_EPSILON, 1 - BCE_EPSILON]`.
pub fn bce_loss(labels: &[f64], predictions: &[f64]) -> Result<f64, LabelError> {
    if labels.len() != predictions.len() {
        return Err(LabelError::LengthMismatch(labels.len(), predictions.len()));
    }
    let total: f64 = labels
        .iter()
        .zip(predictions)
        .map(|(y, p)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// First step whose label falls below `tau`, mirroring how a trained scorer
/// would read the labels back as an error location.
pub fn implied_first_error(labels: &[f64], tau: f64) -> ErrorLocation {
    for (i, y) in labels.iter().enumerate() {
        if *y < tau {
            return ErrorLocation::AtStep(i as u32 + 1);
        }
    }
    ErrorLocation::NoError
}

/// Fraction of samples whose implied first error disagrees with the ground
/// truth. `truth` resolves a sample to its true first-error location;
/// returning `None` aborts with `MissingTruth`.
pub fn label_noise_ratio(
    samples: &[TrainingSample],
    truth: impl Fn(&TrainingSample) -> Option<ErrorLocation>,
    tau: f64,
) -> Result<f64, LabelError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut noisy = 0usize;
    for s in samples {
        let t_true = truth(s).ok_or_else(|| {
            LabelError::MissingTruth(format!("{}#{}", s.question_id, s.response_idx))
        })?;
        if implied_first_error(&s.labels, tau) != t_true {
            noisy += 1;
        }
    }
    Ok(noisy as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ErrorLocation;
    use proptest::prelude::*;

    fn vector(counts: Vec<u32>, k: u32, first_zero: ErrorLocation) -> StepScoreVector {
        StepScoreVector {
            question_id: "q".into(),
            response_ref: "0".into(),
            k,
            correct_counts: counts,
            first_zero,
            unjudgeable_rollouts: 0,
        }
    }

    fn texts(n: usize) -> Vec<Step> {
        (1..=n).map(|i| Step { index: i as u32, text: format!("s{i}") }).collect()
    }

    fn sc(correct: u32, n: u32) -> SelfConfidence {
        SelfConfidence::from_counts("q", "p", correct, n)
    }

    // Scores [1.0, 0.6, 0.2, 0.0] with SC 0.8 and d 2: step 1 is outside
    // the window (4 - 1 = 3 > 2) so it stays hard; the rest reweight to
    // exactly [0.75, 0.25, 0.0].
    #[test]
    fn hand_case_is_bit_exact() {
        let v = vector(vec![5, 3, 1, 0], 5, ErrorLocation::AtStep(4));
        let sample = compute_labels(&v, &texts(4), &sc(4, 5), 2).unwrap();
        assert_eq!(sample.labels, vec![1.0, 0.75, 0.25, 0.0]);
        assert_eq!(
            sample.label_kinds,
            vec![
                LabelKind::Hard,
                LabelKind::SoftReweighted,
                LabelKind::SoftReweighted,
                LabelKind::SoftReweighted
            ]
        );
    }

    #[test]
    fn clamp_caps_soft_labels_at_one() {
        // score 0.9 with SC 0.6: 0.9/0.6 clamps to 1.0.
        let v = vector(vec![9, 0], 10, ErrorLocation::AtStep(2));
        let sample = compute_labels(&v, &texts(2), &sc(6, 10), 2).unwrap();
        assert_eq!(sample.labels, vec![1.0, 0.0]);
        assert_eq!(sample.label_kinds[0], LabelKind::SoftReweighted);
    }

    #[test]
    fn no_error_vector_stays_hard() {
        let v = vector(vec![9], 10, ErrorLocation::NoError);
        let sample = compute_labels(&v, &texts(1), &sc(6, 10), 2).unwrap();
        assert_eq!(sample.labels, vec![1.0]);
        assert_eq!(sample.label_kinds, vec![LabelKind::Hard]);
    }

    #[test]
    fn d_zero_reduces_to_hard_labeling() {
        let v = vector(vec![4, 0], 8, ErrorLocation::AtStep(2));
        let sample = compute_labels(&v, &texts(2), &sc(8, 8), 0).unwrap();
        assert_eq!(sample.labels, vec![1.0, 0.0]);
        assert_eq!(sample.label_kinds, vec![LabelKind::Hard, LabelKind::SoftReweighted]);
    }

    #[test]
    fn zero_confidence_is_rejected() {
        let v = vector(vec![1, 0], 8, ErrorLocation::AtStep(2));
        let mut zero = sc(1, 8);
        zero.correct = 0;
        assert!(matches!(
            compute_labels(&v, &texts(2), &zero, 2),
            Err(LabelError::ZeroConfidence(_))
        ));
    }

    #[test]
    fn malformed_scores_are_rejected() {
        // Interior zero without early stop.
        let v = vector(vec![3, 0, 2], 8, ErrorLocation::AtStep(3));
        assert!(matches!(
            compute_labels(&v, &texts(3), &sc(4, 8), 2),
            Err(LabelError::MalformedScores(_))
        ));
        let v = vector(vec![], 8, ErrorLocation::NoError);
        assert!(matches!(
            compute_labels(&v, &texts(0), &sc(4, 8), 2),
            Err(LabelError::MalformedScores(_))
        ));
    }

    #[test]
    fn bce_known_values() {
        assert!(bce_loss(&[1.0], &[1.0 - 1e-9]).unwrap() < 1e-6);
        let fair = bce_loss(&[0.5], &[0.5]).unwrap();
        assert!((fair - std::f64::consts::LN_2).abs() < 1e-12);
        let two = bce_loss(&[1.0, 0.0], &[0.9, 0.1]).unwrap();
        assert!((two - 0.105360515657826).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_length_mismatch() {
        assert!(matches!(
            bce_loss(&[1.0], &[0.5, 0.5]),
            Err(LabelError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn implied_error_reads_labels_back() {
        assert_eq!(implied_first_error(&[1.0, 0.75, 0.25, 0.0], 0.5), ErrorLocation::AtStep(3));
        assert_eq!(implied_first_error(&[1.0, 1.0], 0.5), ErrorLocation::NoError);
        // Strict comparison: a label exactly at tau is not an error.
        assert_eq!(implied_first_error(&[0.5], 0.5), ErrorLocation::NoError);
    }

    #[test]
    fn noise_ratio_all_agree_is_zero() {
        let v = vector(vec![8, 0], 8, ErrorLocation::AtStep(2));
        let sample = compute_labels(&v, &texts(2), &sc(8, 8), 2).unwrap();
        let ratio =
            label_noise_ratio(&[sample], |_| Some(ErrorLocation::AtStep(2)), 0.5).unwrap();
        assert_eq!(ratio, 0.0);
    }

    #[test]
    fn noise_ratio_formula_vector() {
        // 562 of 1000 disagreeing samples -> 0.562.
        let v = vector(vec![8, 0], 8, ErrorLocation::AtStep(2));
        let sample = compute_labels(&v, &texts(2), &sc(8, 8), 2).unwrap();
        let mut samples = Vec::new();
        for i in 0..1000u32 {
            let mut s = sample.clone();
            s.response_idx = i;
            samples.push(s);
        }
        let ratio = label_noise_ratio(
            &samples,
            |s| {
                Some(if s.response_idx < 562 {
                    ErrorLocation::AtStep(1) // disagrees with implied AtStep(2)
                } else {
                    ErrorLocation::AtStep(2)
                })
            },
            0.5,
        )
        .unwrap();
        assert!((ratio - 0.562).abs() < 1e-12);
    }

    #[test]
    fn jsonl_schema_has_pinned_field_names() {
        let v = vector(vec![5, 3, 1, 0], 5, ErrorLocation::AtStep(4));
        let sample = compute_labels(&v, &texts(4), &sc(4, 5), 2).unwrap();
        let value: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&sample).unwrap()).unwrap();
        for field in [
            "question_id",
            "steps",
            "labels",
            "label_kinds",
            "mc_scores",
            "first_zero",
            "sc",
            "k",
            "d",
            "provider_id",
            "sampling",
            "schema_version",
            "response_idx",
        ] {
            assert!(value.get(field).is_some(), "missing field `{field}`");
        }
        assert_eq!(value["first_zero"], 4);
        assert_eq!(value["label_kinds"][1], "soft_reweighted");
    }

    // Reweighting normalizes away completer capability: two completers at
    // different solve rates annotating the same scripted responses produce
    // reweighted labels that agree more closely than their raw scores.
    #[tokio::test]
    async fn reweighting_aligns_completers_of_different_strength() {
        use crate::annotate::annotate_response;
        use crate::confidence::estimate_self_confidence;
        use crate::model::{JudgeMode, Response, Verdict};
        use crate::simworld::{gen_world, SimCompleterParams, SimProvider};
        use std::sync::Arc;

        let world = Arc::new(gen_world(61, 30, 2, (4, 8), 1.0).unwrap());
        let sampling = SamplingParams::default();
        let strong = SimProvider::new(SimCompleterParams::new(0.9, 0.3, 611), world.clone());
        let weak = SimProvider::new(SimCompleterParams::new(0.45, 0.3, 612), world.clone());

        let mut raw_diff = 0.0f64;
        let mut reweighted_diff = 0.0f64;
        let mut steps_compared = 0u32;
        for problem in &world.problems {
            let sc_strong = estimate_self_confidence(
                &problem.question, &strong, 64, &sampling, JudgeMode::ExactNormalized,
            )
            .await
            .unwrap();
            let sc_weak = estimate_self_confidence(
                &problem.question, &weak, 64, &sampling, JudgeMode::ExactNormalized,
            )
            .await
            .unwrap();
            if sc_strong.correct == 0 || sc_weak.correct == 0 {
                continue;
            }
            for scripted in &problem.scripted_responses {
                let response = Response {
                    question_id: problem.question.id.clone(),
                    steps: scripted.steps.clone(),
                    final_answer: Some(scripted.final_answer.clone()),
                    verdict: Verdict::Incorrect,
                    generator_id: "sim".into(),
                    sampling: sampling.clone(),
                };
                let a = annotate_response(
                    &problem.question, &response, 8, &strong, &sampling, JudgeMode::ExactNormalized,
                )
                .await
                .unwrap();
                let b = annotate_response(
                    &problem.question, &response, 8, &weak, &sampling, JudgeMode::ExactNormalized,
                )
                .await
                .unwrap();
                let common = a.annotated_steps().min(b.annotated_steps()) as usize;
                for t in 0..common {
                    let raw_a = a.correct_counts[t] as f64 / 8.0;
                    let raw_b = b.correct_counts[t] as f64 / 8.0;
                    let rw_a = soft_label(a.correct_counts[t], 8, &sc_strong, true);
                    let rw_b = soft_label(b.correct_counts[t], 8, &sc_weak, true);
                    raw_diff += (raw_a - raw_b).abs();
                    reweighted_diff += (rw_a - rw_b).abs();
                    steps_compared += 1;
                }
            }
        }
        assert!(steps_compared > 100, "too few comparable steps: {steps_compared}");
        let raw_mean = raw_diff / steps_compared as f64;
        let reweighted_mean = reweighted_diff / steps_compared as f64;
        assert!(
            reweighted_mean < raw_mean,
            "reweighted mean diff {reweighted_mean:.4} not below raw {raw_mean:.4}"
        );
    }

    #[test]
    fn missing_truth_is_an_error() {
        let v = vector(vec![8, 0], 8, ErrorLocation::AtStep(2));
        let sample = compute_labels(&v, &texts(2), &sc(8, 8), 2).unwrap();
        assert!(matches!(
            label_noise_ratio(&[sample], |_| None, 0.5),
            Err(LabelError::MissingTruth(_))
        ));
    }

    proptest! {
        // Every soft label is clamped to [raw score, 1]: dividing by
        // SC <= 1 can only raise it.
        #[test]
        fn soft_labels_bounded(count in 0u32..=8, sc_correct in 1u32..=16) {
            let conf = sc(sc_correct, 16);
            let label = soft_label(count, 8, &conf, true);
            let raw = count as f64 / 8.0;
            prop_assert!(label <= 1.0 + 1e-15);
            prop_assert!(label >= raw - 1e-15);
        }

        // For fixed score, labels are non-increasing in SC.
        #[test]
        fn soft_labels_monotone_in_confidence(count in 1u32..=8) {
            let mut last = f64::INFINITY;
            for correct in 1..=16u32 {
                let label = soft_label(count, 8, &sc(correct, 16), true);
                prop_assert!(label <= last + 1e-15);
                last = label;
            }
        }

        // Exactly the steps within the window are soft; earlier steps are
        // hard ones.
        #[test]
        fn window_partition(m in 1u32..=10, d in 0u32..=12) {
            let mut counts: Vec<u32> = (0..m - 1).map(|i| 1 + i % 7).collect();
            counts.push(0);
            let v = vector(counts, 8, ErrorLocation::AtStep(m));
            let n = m as usize;
            let sample = compute_labels(&v, &texts(n), &sc(6, 8), d).unwrap();
            for (i, kind) in sample.label_kinds.iter().enumerate() {
                let t = i as u32 + 1;
                let expect_soft = m - t <= d;
                prop_assert_eq!(*kind == LabelKind::SoftReweighted, expect_soft);
                if !expect_soft {
                    prop_assert_eq!(sample.labels[i], 1.0);
                }
            }
        }
    }
}
