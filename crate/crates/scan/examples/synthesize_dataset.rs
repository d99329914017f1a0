//! End-to-end simulated synthesis: generate, select, annotate, label, and
//! account for every sampling call. Rollouts go exclusively to negatives.
//!
//! ```bash
//! cargo run -p scan --example synthesize_dataset
//! ```

use scan::denoise::label_noise_ratio;
use scan::model::{DelimiterPolicy, JudgeMode, SamplingParams, Step};
use scan::simworld::{gen_world, true_error_from_steps, SimCompleterParams, SimProvider};
use scan::synthesis::{
    run_synthesis_with_providers, CancelFlag, PositivePolicy, SynthesisConfig,
};
use scan::provider::RolloutProvider;
use std::sync::Arc;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let world = Arc::new(gen_world(42, 20, 1, (4, 8), 0.5).unwrap());
    let out_dir = std::env::temp_dir().join("scan-example-synthesis");
    let _ = std::fs::remove_dir_all(&out_dir);

    let config = SynthesisConfig {
        corpus: world.questions(),
        n_responses: 16,
        generation_sampling: SamplingParams::default(),
        rollout_sampling: SamplingParams::default(),
        k: 8,
        d: 2,
        epsilon: 0.5,
        positive_policy: PositivePolicy::HighConfidenceOnly { threshold: 0.5 },
        reweight: true,
        judge_mode: JudgeMode::ExactNormalized,
        delimiter: DelimiterPolicy::BlankLine,
        providers: Vec::new(),
        output_path: out_dir.clone(),
        seed: 42,
        noise_tau: 0.5,
        max_concurrent_questions: 1,
    };
    let provider: Arc<dyn RolloutProvider> = Arc::new(SimProvider::new(
        SimCompleterParams::new(0.7, 0.25, 42),
        world.clone(),
    ));

    let outcome = run_synthesis_with_providers(&config, &[provider], &CancelFlag::new())
        .await
        .unwrap();

    let b = &outcome.budget;
    println!("budget report:");
    println!("  generated completions : {}", b.generated_completions);
    println!("  rollout calls         : {}", b.rollout_calls);
    println!("  annotated responses   : {}", b.annotated_responses);
    println!("  emitted samples       : {}", b.emitted_samples);
    println!("  direct positives      : {}", b.positives_without_annotation);
    println!("  skipped (low SC)      : {}", b.skipped_low_sc);
    println!("  skipped (unjudgeable) : {}", b.skipped_unjudgeable);

    // The simulator embeds ground truth in step texts, so the emitted
    // dataset can audit its own label noise.
    let ratio = label_noise_ratio(
        &outcome.samples,
        |s| {
            let steps: Vec<Step> = s
                .steps
                .iter()
                .enumerate()
                .map(|(i, t)| Step { index: i as u32 + 1, text: t.clone() })
                .collect();
            Some(true_error_from_steps(&steps))
        },
        0.5,
    )
    .unwrap();
    println!("\nlabel noise ratio against simulator ground truth: {ratio:.4}");
    println!("artifacts in {}", out_dir.display());
}
