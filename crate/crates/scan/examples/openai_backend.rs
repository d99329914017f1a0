//! Sample completions from a live OpenAI-compatible backend.
//!
//! Points at whatever `SCAN_ENDPOINT` / `SCAN_MODEL` name (for example a
//! local vLLM server); exits early when no endpoint is configured so the
//! example never needs network access to compile-check.
//!
//! ```bash
//! SCAN_ENDPOINT=http://localhost:8000 SCAN_MODEL=my-model \
//!   cargo run -p scan --example openai_backend
//! ```

use scan::model::{Question, SamplingParams};
use scan::provider::{CompletionRequest, HttpProvider, ProviderConfig, RolloutProvider};

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let Ok(endpoint) = std::env::var("SCAN_ENDPOINT") else {
        println!("SCAN_ENDPOINT not set; nothing to call.");
        println!("usage: SCAN_ENDPOINT=http://localhost:8000 SCAN_MODEL=<name> cargo run --example openai_backend");
        return;
    };
    let model = std::env::var("SCAN_MODEL").unwrap_or_else(|_| "default".to_string());

    let provider = HttpProvider::new(ProviderConfig {
        endpoint_url: endpoint,
        model_name: model,
        api_key: None, // SCAN_API_KEY overrides when set
        max_in_flight: 4,
        request_timeout_ms: 60_000,
        retry: Default::default(),
        default_sampling: SamplingParams::default(),
        native_n: true,
    })
    .expect("client construction");

    let question = Question::new(
        "demo-1",
        "Natalia sold clips to 48 friends in April, and half as many in May. \
         How many clips did she sell altogether? Put the final answer in \\boxed{}.",
        "72",
    );
    let req = CompletionRequest {
        question,
        prefix_steps: Vec::new(),
        n_samples: 4,
        sampling: SamplingParams { temperature: 0.7, top_p: 0.8, max_tokens: 512, stop: vec![] },
        seed: Some(7),
    };

    match provider.sample_completions(&req).await {
        Ok(completions) => {
            println!("got {} completions:", completions.len());
            for (i, c) in completions.iter().enumerate() {
                let preview: String = c.text.chars().take(120).collect();
                println!("  [{i}] ({:?}) {preview}...", c.finish_reason);
            }
        }
        Err(e) => {
            eprintln!("backend call failed: {e} (retryable: {})", e.is_retryable());
            std::process::exit(2);
        }
    }
}
