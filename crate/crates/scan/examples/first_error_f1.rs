//! First-error-location F1: exact-location accuracy on erroneous samples,
//! no-error accuracy on correct samples, harmonic mean of the two.
//!
//! ```bash
//! cargo run -p scan --example first_error_f1
//! ```

use scan::evalkit::{f1_from_accuracies, first_error_f1, predict_first_error_from_scores, EvalCase};
use scan::model::ErrorLocation::{self, AtStep, NoError};

fn case(id: &str, gold: ErrorLocation, pred: ErrorLocation) -> EvalCase {
    EvalCase {
        question_id: id.into(),
        gold_first_error: gold,
        predicted_first_error: pred,
    }
}

fn main() {
    let cases = vec![
        case("a", AtStep(3), AtStep(3)), // exact hit
        case("b", AtStep(2), AtStep(4)), // wrong location
        case("c", AtStep(5), AtStep(5)), // exact hit
        case("d", NoError, NoError),     // correct response recognized
        case("e", NoError, AtStep(1)),   // false alarm
        case("f", NoError, NoError),
    ];
    let report = first_error_f1(&cases);
    println!(
        "error_acc {:.3} over {} erroneous cases; correct_acc {:.3} over {} correct cases",
        report.error_acc, report.error_cases, report.correct_acc, report.correct_cases
    );
    println!("F1 = {:.3}", report.f1);

    // Predictions usually come from step scores through a threshold.
    let step_scores = [0.91, 0.88, 0.42, 0.80];
    let pred = predict_first_error_from_scores(&step_scores, 0.5).unwrap();
    println!("\nscores {step_scores:?} with tau 0.5 predict first error at {pred}");

    // The harmonic mean itself, on published-style accuracy pairs.
    for (e, c) in [(0.729, 0.907), (0.671, 0.819), (0.5, 1.0)] {
        println!("f1({e}, {c}) = {:.3}", f1_from_accuracies(e, c));
    }
}
