//! Best-of-N selection over verifier step scores with every aggregation
//! method.
//!
//! ```bash
//! cargo run -p scan --example best_of_n
//! ```

use scan::evalkit::{aggregate, select_best_of_n, Aggregation, ScoredResponse, SelectionMethod};

fn cand(answer: &str, scores: &[f64]) -> ScoredResponse {
    ScoredResponse {
        question_id: "q1".into(),
        answer: Some(answer.to_string()),
        step_scores: scores.to_vec(),
    }
}

fn main() {
    // Eight candidates: "140" is right five times with solid step scores,
    // "150" once with a flashy last step, "130" twice.
    let candidates = vec![
        cand("140", &[0.92, 0.88, 0.90]),
        cand("150", &[0.95, 0.35, 0.99]),
        cand("140", &[0.85, 0.80, 0.83]),
        cand("130", &[0.60, 0.55, 0.50]),
        cand("140", &[0.90, 0.86, 0.88]),
        cand("130", &[0.58, 0.52, 0.49]),
        cand("140", &[0.89, 0.84, 0.87]),
        cand("140", &[0.91, 0.83, 0.86]),
    ];

    println!("aggregated rewards per candidate:");
    for (i, c) in candidates.iter().enumerate() {
        println!(
            "  [{i}] answer {:>3}  min {:.2}  last {:.2}",
            c.answer.as_deref().unwrap(),
            aggregate(&c.step_scores, Aggregation::Min).unwrap(),
            aggregate(&c.step_scores, Aggregation::Last).unwrap(),
        );
    }

    println!("\nselection per method:");
    for method in SelectionMethod::ALL {
        let sel = select_best_of_n(&candidates, method).unwrap();
        println!(
            "  {:<13} -> candidate {} answering {}",
            method.name(),
            sel.index,
            sel.answer.as_deref().unwrap_or("<none>")
        );
    }
}
