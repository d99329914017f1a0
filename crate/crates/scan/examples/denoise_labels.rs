//! Noise-tolerant labeling: tolerance window plus confidence reweighting,
//! compared against plain hard labels.
//!
//! ```bash
//! cargo run -p scan --example denoise_labels
//! ```

use scan::annotate::StepScoreVector;
use scan::confidence::SelfConfidence;
use scan::denoise::{bce_loss, compute_labels, compute_labels_with, implied_first_error, LabelOptions};
use scan::model::{ErrorLocation, SamplingParams, Step};

fn main() {
    // A 4-step response scored [1.0, 0.6, 0.2, 0.0] by a completer whose
    // self-confidence on the question is 0.8.
    let scores = StepScoreVector {
        question_id: "demo".into(),
        response_ref: "0".into(),
        k: 5,
        correct_counts: vec![5, 3, 1, 0],
        first_zero: ErrorLocation::AtStep(4),
        unjudgeable_rollouts: 0,
    };
    let steps: Vec<Step> = (1..=4)
        .map(|i| Step { index: i, text: format!("step {i}") })
        .collect();
    let sc = SelfConfidence::from_counts("demo", "completer", 4, 5);

    println!("raw step scores: {:?}  (self-confidence {})", scores.scores(), sc.value());
    for d in [0, 1, 2, 4] {
        let sample = compute_labels(&scores, &steps, &sc, d).unwrap();
        println!(
            "d = {d}: labels {:?} kinds {:?} implied error {}",
            sample.labels,
            sample.label_kinds,
            implied_first_error(&sample.labels, 0.5)
        );
    }

    // Reweighting can be toggled off to see its isolated effect.
    let plain = compute_labels_with(
        &scores,
        &steps,
        &sc,
        LabelOptions { d: 2, reweight: false },
        0,
        SamplingParams::default(),
    )
    .unwrap();
    println!("d = 2 without reweighting: labels {:?}", plain.labels);

    // The loss a scorer would incur against these labels.
    let sample = compute_labels(&scores, &steps, &sc, 2).unwrap();
    let good_preds = vec![0.95, 0.7, 0.3, 0.05];
    let bad_preds = vec![0.95, 0.95, 0.95, 0.95];
    println!(
        "\nBCE vs denoised labels: aligned predictions {:.4}, overconfident predictions {:.4}",
        bce_loss(&sample.labels, &good_preds).unwrap(),
        bce_loss(&sample.labels, &bad_preds).unwrap()
    );
}
