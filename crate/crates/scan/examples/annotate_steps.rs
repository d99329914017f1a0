//! Step-wise Monte Carlo annotation with early stop.
//!
//! ```bash
//! cargo run -p scan --example annotate_steps
//! ```

use scan::annotate::annotate_response;
use scan::model::{JudgeMode, Response, SamplingParams, Verdict};
use scan::provider::CountingProvider;
use scan::simworld::{gen_world, SimCompleterParams, SimProvider};
use std::sync::Arc;

#[tokio::main(flavor = "current_thread")]
async fn main() {
    // Every scripted response is erroneous so annotation has work to do.
    let world = Arc::new(gen_world(3, 4, 1, (5, 8), 1.0).unwrap());
    let provider = CountingProvider::new(SimProvider::new(
        SimCompleterParams::new(0.85, 0.25, 3),
        world.clone(),
    ));
    let sampling = SamplingParams::default();
    let k = 8;

    for problem in &world.problems {
        let scripted = &problem.scripted_responses[0];
        let response = Response {
            question_id: problem.question.id.clone(),
            steps: scripted.steps.clone(),
            final_answer: Some(scripted.final_answer.clone()),
            verdict: Verdict::Incorrect,
            generator_id: "sim".into(),
            sampling: sampling.clone(),
        };
        let scores = annotate_response(
            &problem.question,
            &response,
            k,
            &provider,
            &sampling,
            JudgeMode::ExactNormalized,
        )
        .await
        .unwrap();
        println!(
            "{}: true error at {}, scores {:?} -> first zero {} ({} rollouts)",
            problem.question.id,
            scripted.t_true,
            scores.scores(),
            scores.first_zero,
            scores.rollouts_used(),
        );
    }

    println!(
        "\nprovider saw {} rollout completions in total (k = {k} per annotated step)",
        provider.rollout_sample_count()
    );
}
