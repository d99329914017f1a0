//! Downstream quality measurement: best-of-N response selection over step
//! scores, majority voting, and first-error-location F1.

use crate::model::{normalize_answer, ErrorLocation};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty step-score vector")]
    EmptyScores,
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("no candidate has an extractable answer")]
    NoJudgeableAnswer,
}

/// A candidate response scored step-by-step by some verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub step_scores: Vec<f64>,
}

/// One first-error evaluation case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub question_id: String,
    pub gold_first_error: ErrorLocation,
    pub predicted_first_error: ErrorLocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Min,
    Last,
}

/// Collapse a step-score vector to a single reward.
pub fn aggregate(scores: &[f64], method: Aggregation) -> Result<f64, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    Ok(match method {
        Aggregation::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Last => *scores.last().unwrap(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    MinMax,
    LastMax,
    MinVote,
    LastVote,
    MajorityVote,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 5] = [
        SelectionMethod::MinMax,
        SelectionMethod::LastMax,
        SelectionMethod::MinVote,
        SelectionMethod::LastVote,
        SelectionMethod::MajorityVote,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SelectionMethod::MinMax => "min_max",
            SelectionMethod::LastMax => "last_max",
            SelectionMethod::MinVote => "min_vote",
            SelectionMethod::LastVote => "last_vote",
            SelectionMethod::MajorityVote => "majority_vote",
        }
    }
}

/// Selection outcome: the winning candidate index and its answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub answer: Option<String>,
}

fn argmax_by_score(
    candidates: &[ScoredResponse],
    method: Aggregation,
) -> Result<Selection, EvalError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let score = aggregate(&c.step_scores, method)?;
        // Strict comparison keeps the earliest candidate on ties.
        if best.map(|(_, s)| score > s).unwrap_or(true) {
            best = Some((i, score));
        }
    }
    let (index, _) = best.ok_or(EvalError::NoCandidates)?;
    Ok(Selection { index, answer: candidates[index].answer.clone() })
}

fn argmax_by_vote(
    candidates: &[ScoredResponse],
    weight: impl Fn(&ScoredResponse) -> Result<f64, EvalError>,
) -> Result<Selection, EvalError> {
    // Vote weights grouped by normalized answer; the winning answer keeps
    // the index of its first supporting candidate for deterministic ties.
    let mut tally: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        let Some(answer) = &c.answer else { continue };
        let w = weight(c)?;
        let entry = tally.entry(normalize_answer(answer)).or_insert((0.0, i));
        entry.0 += w;
    }
    if tally.is_empty() {
        return Err(EvalError::NoJudgeableAnswer);
    }
    let (_, (_, index)) = tally
        .iter()
        .max_by(|a, b| {
            (a.1 .0)
                .partial_cmp(&b.1 .0)
                .unwrap_or(std::cmp::Ordering::Equal)
                // Prefer the earlier first-supporter on exact weight ties.
                .then(b.1 .1.cmp(&a.1 .1))
        })
        .map(|(k, v)| (k.clone(), *v))
        .ok_or(EvalError::NoJudgeableAnswer)?;
    Ok(Selection { index, answer: candidates[index].answer.clone() })
}

/// Select the best candidate. Ties always break toward the lowest
/// candidate index so reports are reproducible.
pub fn select_best_of_n(
    candidates: &[ScoredResponse],
    method: SelectionMethod,
) -> Result<Selection, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    match method {
        SelectionMethod::MinMax => argmax_by_score(candidates, Aggregation::Min),
        SelectionMethod::LastMax => argmax_by_score(candidates, Aggregation::Last),
        SelectionMethod::MinVote => {
            argmax_by_vote(candidates, |c| aggregate(&c.step_scores, Aggregation::Min))
        }
        SelectionMethod::LastVote => {
            argmax_by_vote(candidates, |c| aggregate(&c.step_scores, Aggregation::Last))
        }
        SelectionMethod::MajorityVote => argmax_by_vote(candidates, |_| Ok(1.0)),
    }
}

/// First-error accuracy report: exact-location accuracy on erroneous
/// cases, no-error accuracy on correct cases, and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub error_acc: f64,
    pub correct_acc: f64,
    pub f1: f64,
    pub error_cases: u64,
    pub correct_cases: u64,
    /// Set when one side has no cases, leaving its accuracy (and the F1)
    /// only partially defined.
    pub degenerate: bool,
}

/// Harmonic mean of the two accuracies; 0 when both are 0.
pub fn f1_from_accuracies(error_acc: f64, correct_acc: f64) -> f64 {
    if error_acc + correct_acc == 0.0 {
        0.0
    } else {
        2.0 * error_acc * correct_acc / (error_acc + correct_acc)
    }
}

pub fn first_error_f1(cases: &[EvalCase]) -> F1Report {
    let mut error_cases = 0u64;
    let mut error_hits = 0u64;
    let mut correct_cases = 0u64;
    let mut correct_hits = 0u64;
    for case in cases {
        match case.gold_first_error {
            ErrorLocation::AtStep(_) => {
                error_cases += 1;
                if case.predicted_first_error == case.gold_first_error {
                    error_hits += 1;
                }
            }
            ErrorLocation::NoError => {
                correct_cases += 1;
                if case.predicted_first_error == ErrorLocation::NoError {
                    correct_hits += 1;
                }
            }
        }
    }
    let error_acc = if error_cases > 0 { error_hits as f64 / error_cases as f64 } else { 0.0 };
    let correct_acc =
        if correct_cases > 0 { correct_hits as f64 / correct_cases as f64 } else { 0.0 };
    F1Report {
        error_acc,
        correct_acc,
        f1: f1_from_accuracies(error_acc, correct_acc),
        error_cases,
        correct_cases,
        degenerate: error_cases == 0 || correct_cases == 0,
    }
}

/// Selection accuracy over grouped candidates: for each question, select
/// one candidate and judge its answer against the gold. Questions where a
/// vote method finds no judgeable answer count as incorrect.
pub fn judge_selection_accuracy(
    by_question: &BTreeMap<&str, Vec<&ScoredResponse>>,
    gold: &std::collections::HashMap<&str, &str>,
    method: SelectionMethod,
) -> Result<f64, EvalError> {
    if by_question.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    let mut correct = 0usize;
    for (question_id, candidates) in by_question {
        let owned: Vec<ScoredResponse> = candidates.iter().map(|c| (*c).clone()).collect();
        let selection = match select_best_of_n(&owned, method) {
            Ok(s) => s,
            Err(EvalError::NoJudgeableAnswer) => continue,
            Err(e) => return Err(e),
        };
        let Some(gold_answer) = gold.get(question_id) else { continue };
        if let Some(answer) = &selection.answer {
            if crate::model::judge_answer(answer, gold_answer, crate::model::JudgeMode::ExactNormalized)
            {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / by_question.len() as f64)
}

/// Adapter from step scores to a first-error prediction: the first step
/// scoring strictly below `tau`, else no error.
pub fn predict_first_error_from_scores(
    scores: &[f64],
    tau: f64,
) -> Result<ErrorLocation, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    for (i, s) in scores.iter().enumerate() {
        if *s < tau {
            return Ok(ErrorLocation::AtStep(i as u32 + 1));
        }
    }
    Ok(ErrorLocation::NoError)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(answer: &str, scores: &[f64]) -> ScoredResponse {
        ScoredResponse {
            question_id: "q".into(),
            answer: Some(answer.to_string()),
            step_scores: scores.to_vec(),
        }
    }

    #[test]
    fn aggregate_min_and_last() {
        let p = [0.9, 0.4, 0.8];
        assert_eq!(aggregate(&p, Aggregation::Min).unwrap(), 0.4);
        assert_eq!(aggregate(&p, Aggregation::Last).unwrap(), 0.8);
        assert_eq!(aggregate(&[0.7], Aggregation::Min).unwrap(), 0.7);
        assert_eq!(aggregate(&[0.7], Aggregation::Last).unwrap(), 0.7);
        assert!(matches!(aggregate(&[], Aggregation::Min), Err(EvalError::EmptyScores)));
    }

    #[test]
    fn min_max_picks_highest_min() {
        let candidates = [cand("A", &[0.9, 0.8]), cand("B", &[0.95, 0.4])];
        let sel = select_best_of_n(&candidates, SelectionMethod::MinMax).unwrap();
        assert_eq!(sel.answer.as_deref(), Some("A"));
    }

    #[test]
    fn min_vote_weights_votes_by_score() {
        // A: 0.5 + 0.4 = 0.9, B: 0.85 -> A wins despite B's higher single score.
        let candidates = [
            cand("A", &[0.5]),
            cand("A", &[0.4]),
            cand("B", &[0.85]),
        ];
        let sel = select_best_of_n(&candidates, SelectionMethod::MinVote).unwrap();
        assert_eq!(sel.answer.as_deref(), Some("A"));
    }

    #[test]
    fn single_candidate_wins_every_method() {
        let candidates = [cand("only", &[0.1, 0.2])];
        for method in SelectionMethod::ALL {
            let sel = select_best_of_n(&candidates, method).unwrap();
            assert_eq!(sel.index, 0);
            assert_eq!(sel.answer.as_deref(), Some("only"));
        }
    }

    #[test]
    fn majority_vote_ignores_scores() {
        let candidates = [
            cand("A", &[0.01]),
            cand("A", &[0.02]),
            cand("B", &[0.99]),
        ];
        let sel = select_best_of_n(&candidates, SelectionMethod::MajorityVote).unwrap();
        assert_eq!(sel.answer.as_deref(), Some("A"));
    }

    #[test]
    fn vote_groups_by_normalized_answer() {
        let candidates = [
            cand("1/2", &[0.3]),
            cand("2/4", &[0.3]),
            cand("0.9", &[0.5]),
        ];
        let sel = select_best_of_n(&candidates, SelectionMethod::MinVote).unwrap();
        assert_eq!(normalize_answer(sel.answer.as_deref().unwrap()), "1/2");
    }

    #[test]
    fn vote_without_answers_errors() {
        let candidates = [ScoredResponse {
            question_id: "q".into(),
            answer: None,
            step_scores: vec![0.5],
        }];
        assert!(matches!(
            select_best_of_n(&candidates, SelectionMethod::MinVote),
            Err(EvalError::NoJudgeableAnswer)
        ));
        // Max methods still select by score.
        assert!(select_best_of_n(&candidates, SelectionMethod::MinMax).is_ok());
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let candidates = [cand("A", &[0.5]), cand("B", &[0.5]), cand("C", &[0.5])];
        for method in SelectionMethod::ALL {
            let sel = select_best_of_n(&candidates, method).unwrap();
            assert_eq!(sel.index, 0, "{method:?} broke tie away from index 0");
        }
    }

    #[test]
    fn f1_published_vectors() {
        assert!((f1_from_accuracies(0.729, 0.907) - 0.809).abs() <= 0.001);
        assert!((f1_from_accuracies(0.671, 0.819) - 0.738).abs() <= 0.001);
        assert!((f1_from_accuracies(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_from_accuracies(0.0, 0.0), 0.0);
    }

    #[test]
    fn f1_counts_exact_location_matches() {
        use ErrorLocation::*;
        let cases = vec![
            EvalCase { question_id: "a".into(), gold_first_error: AtStep(2), predicted_first_error: AtStep(2) },
            EvalCase { question_id: "b".into(), gold_first_error: AtStep(3), predicted_first_error: AtStep(1) },
            EvalCase { question_id: "c".into(), gold_first_error: NoError, predicted_first_error: NoError },
            EvalCase { question_id: "d".into(), gold_first_error: NoError, predicted_first_error: AtStep(4) },
        ];
        let report = first_error_f1(&cases);
        assert_eq!(report.error_acc, 0.5);
        assert_eq!(report.correct_acc, 0.5);
        assert!(!report.degenerate);
        assert!((report.f1 - 0.5).abs() < 1e-12);

        let perfect: Vec<EvalCase> = cases
            .iter()
            .map(|c| EvalCase {
                question_id: c.question_id.clone(),
                gold_first_error: c.gold_first_error,
                predicted_first_error: c.gold_first_error,
            })
            .collect();
        assert_eq!(first_error_f1(&perfect).f1, 1.0);
    }

    #[test]
    fn f1_flags_degenerate_inputs() {
        let cases = vec![EvalCase {
            question_id: "a".into(),
            gold_first_error: ErrorLocation::AtStep(1),
            predicted_first_error: ErrorLocation::AtStep(1),
        }];
        let report = first_error_f1(&cases);
        assert!(report.degenerate);
        assert_eq!(report.correct_cases, 0);
    }

    #[test]
    fn score_threshold_prediction() {
        use ErrorLocation::*;
        assert_eq!(predict_first_error_from_scores(&[0.9, 0.3, 0.8], 0.5).unwrap(), AtStep(2));
        assert_eq!(predict_first_error_from_scores(&[0.9, 0.9], 0.5).unwrap(), NoError);
        // Strict inequality at the boundary.
        assert_eq!(predict_first_error_from_scores(&[0.5], 0.5).unwrap(), NoError);
        assert!(matches!(
            predict_first_error_from_scores(&[], 0.5),
            Err(EvalError::EmptyScores)
        ));
    }

    // With ground-truth step scores (1 before the true error, 0 at and
    // after) the threshold adapter recovers every location exactly and the
    // resulting F1 is 1.
    #[test]
    fn ground_truth_scores_give_perfect_f1() {
        use crate::simworld::gen_world;
        let world = gen_world(71, 25, 4, (3, 8), 0.5).unwrap();
        let mut cases = Vec::new();
        for problem in &world.problems {
            for scripted in &problem.scripted_responses {
                let scores: Vec<f64> = (1..=scripted.steps.len() as u32)
                    .map(|t| match scripted.t_true {
                        ErrorLocation::AtStep(e) if t >= e => 0.0,
                        _ => 1.0,
                    })
                    .collect();
                let predicted = predict_first_error_from_scores(&scores, 0.5).unwrap();
                assert_eq!(predicted, scripted.t_true);
                cases.push(EvalCase {
                    question_id: problem.question.id.clone(),
                    gold_first_error: scripted.t_true,
                    predicted_first_error: predicted,
                });
            }
        }
        let report = first_error_f1(&cases);
        assert_eq!(report.f1, 1.0);
        assert!(!report.degenerate);
    }

    proptest! {
        // Scaling every score vector by a common factor in (0, 1] keeps
        // the MinMax/LastMax argmax unchanged.
        #[test]
        fn selection_scale_invariance(
            vectors in proptest::collection::vec(
                proptest::collection::vec(0.01f64..1.0, 1..6),
                1..6
            ),
            scale in 0.01f64..=1.0
        ) {
            let candidates: Vec<ScoredResponse> = vectors
                .iter()
                .enumerate()
                .map(|(i, v)| cand(&format!("a{i}"), v))
                .collect();
            let scaled: Vec<ScoredResponse> = vectors
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let v: Vec<f64> = v.iter().map(|s| s * scale).collect();
                    cand(&format!("a{i}"), &v)
                })
                .collect();
            for method in [SelectionMethod::MinMax, SelectionMethod::LastMax] {
                let a = select_best_of_n(&candidates, method).unwrap();
                let b = select_best_of_n(&scaled, method).unwrap();
                prop_assert_eq!(a.index, b.index);
            }
        }

        // With all-distinct answers, MinVote degenerates to MinMax.
        #[test]
        fn min_vote_degenerates_to_min_max(
            vectors in proptest::collection::vec(
                proptest::collection::vec(0.01f64..1.0, 1..6),
                1..6
            )
        ) {
            let candidates: Vec<ScoredResponse> = vectors
                .iter()
                .enumerate()
                .map(|(i, v)| cand(&format!("distinct-{i}"), v))
                .collect();
            let vote = select_best_of_n(&candidates, SelectionMethod::MinVote).unwrap();
            let max = select_best_of_n(&candidates, SelectionMethod::MinMax).unwrap();
            prop_assert_eq!(vote.answer, max.answer);
        }

        // Permuting case order leaves the F1 report unchanged.
        #[test]
        fn f1_is_order_invariant(
            golds in proptest::collection::vec(proptest::option::of(1u32..8), 2..20),
            preds in proptest::collection::vec(proptest::option::of(1u32..8), 2..20)
        ) {
            let n = golds.len().min(preds.len());
            let cases: Vec<EvalCase> = (0..n)
                .map(|i| EvalCase {
                    question_id: format!("q{i}"),
                    gold_first_error: ErrorLocation::from_option(golds[i]),
                    predicted_first_error: ErrorLocation::from_option(preds[i]),
                })
                .collect();
            let fwd = first_error_f1(&cases);
            let rev: Vec<EvalCase> = cases.iter().rev().cloned().collect();
            let bwd = first_error_f1(&rev);
            prop_assert_eq!(fwd, bwd);
        }
    }
}
