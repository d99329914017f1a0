//! Estimate per-question self-confidence and bucket it.
//!
//! ```bash
//! cargo run -p scan --example self_confidence
//! ```

use scan::confidence::{estimate_self_confidence, ScCache};
use scan::model::{JudgeMode, SamplingParams};
use scan::simworld::{gen_world, SimCompleterParams, SimProvider};
use std::sync::Arc;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let world = Arc::new(gen_world(11, 6, 1, (3, 6), 0.5).unwrap());
    let sampling = SamplingParams::default();

    // Three completers of increasing capability on the same questions.
    for p_solve in [0.15, 0.5, 0.85] {
        let provider = SimProvider::new(SimCompleterParams::new(p_solve, 0.3, 11), world.clone());
        println!("completer with p_solve = {p_solve}:");
        for problem in &world.problems {
            let sc = estimate_self_confidence(
                &problem.question,
                &provider,
                16,
                &sampling,
                JudgeMode::ExactNormalized,
            )
            .await
            .unwrap();
            println!(
                "  {}: {:>2}/16 = {:.4} -> {}",
                sc.question_id,
                sc.correct,
                sc.value(),
                sc.bucket()
            );
        }
    }

    // The cache persists estimates for reuse across pipeline phases.
    let provider = SimProvider::new(SimCompleterParams::new(0.5, 0.3, 11), world.clone());
    let cache = ScCache::new();
    for problem in &world.problems {
        cache
            .get_or_estimate(&problem.question, &provider, 16, &sampling, JudgeMode::ExactNormalized)
            .await
            .unwrap();
    }
    let dir = std::env::temp_dir().join("scan-example-sc");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("sc_cache.jsonl");
    cache.save(&path).unwrap();
    println!("\nwrote cache sidecar to {}", path.display());
}
