//! Rollout-provider contract and the OpenAI-compatible HTTP client.
//!
//! Everything downstream (generation, self-confidence, step annotation)
//! samples completions through [`RolloutProvider`]. The HTTP implementation
//! targets `/v1/chat/completions`-shaped backends with bounded in-flight
//! concurrency, exponential-backoff retries, and top-up requests when a
//! backend truncates a batch.

use crate::model::{Question, SamplingParams, Step};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;
use tokio::sync::Semaphore;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable after {attempts} attempts: {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed backend reply: {0}")]
    MalformedReply(String),
    #[error("unknown question `{0}`")]
    UnknownQuestion(String),
}

impl ProviderError {
    /// Whether the failed unit of work is worth re-issuing later. The
    /// synthesis journal checkpoints around failed units so retryable
    /// errors resume cleanly on the next run.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Unavailable { .. } | ProviderError::Timeout(_))
    }
}

/// Retry policy for a single backend request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryConfig {
    pub max_attempts: u32,
    /// Base delay; attempt `i` waits `backoff_base * 2^(i-1)`.
    pub backoff_base_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_base_ms: 200 }
    }
}

/// Configuration for an OpenAI-compatible inference backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Overridden by the `SCAN_API_KEY` environment variable when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default)]
    pub default_sampling: SamplingParams,
    /// Use the backend's native `n` parameter for batched sampling; when
    /// false, `n` is fanned out as single-sample requests.
    #[serde(default = "default_true")]
    pub native_n: bool,
}

fn default_max_in_flight() -> usize {
    8
}
fn default_timeout_ms() -> u64 {
    120_000
}
fn default_true() -> bool {
    true
}

/// One sampling request: continue from `prefix_steps` (possibly empty) and
/// return exactly `n_samples` completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub question: Question,
    pub prefix_steps: Vec<Step>,
    pub n_samples: u32,
    pub sampling: SamplingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// Uniform sampler contract. Implementations must be shareable across
/// concurrent callers.
#[async_trait]
pub trait RolloutProvider: Send + Sync {
    fn id(&self) -> &str;

    /// Returns exactly `req.n_samples` completions or an error.
    async fn sample_completions(
        &self,
        req: &CompletionRequest,
    ) -> Result<Vec<Completion>, ProviderError>;
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP provider
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    top_p: f64,
    n: u32,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stop: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Chat-completions client with a semaphore bounding in-flight requests.
pub struct HttpProvider {
    config: ProviderConfig,
    client: reqwest::Client,
    in_flight: Arc<Semaphore>,
    id: String,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.request_timeout_ms))
            .build()
            .map_err(|e| ProviderError::MalformedReply(format!("client init: {e}")))?;
        let id = config.model_name.clone();
        let in_flight = Arc::new(Semaphore::new(config.max_in_flight.max(1)));
        Ok(Self { config, client, in_flight, id })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn api_key(&self) -> Option<String> {
        std::env::var("SCAN_API_KEY")
            .ok()
            .filter(|k| !k.is_empty())
            .or_else(|| self.config.api_key.clone())
    }

    fn build_messages<'a>(req: &'a CompletionRequest, prefix: &'a str) -> Vec<ChatMessage<'a>> {
        let mut messages = vec![ChatMessage { role: "user", content: &req.question.text }];
        if !prefix.is_empty() {
            // The partial solution goes in as the start of the assistant
            // turn so the backend continues mid-solution.
            messages.push(ChatMessage { role: "assistant", content: prefix });
        }
        messages
    }

    /// One shot at the backend, holding an in-flight permit across the full
    /// request/response cycle so the backend never sees more than
    /// `max_in_flight` open requests. `Err((retryable, message))` classifies
    /// the failure for the retry loop.
    async fn attempt(
        &self,
        url: &str,
        body: &ChatRequestBody<'_>,
    ) -> Result<Vec<Completion>, (bool, String)> {
        let _permit = self.in_flight.acquire().await.expect("semaphore closed");
        let mut http = self.client.post(url).json(body);
        if let Some(key) = self.api_key() {
            http = http.bearer_auth(key);
        }
        let resp = match http.send().await {
            Ok(resp) => resp,
            Err(e) if e.is_timeout() => return Err((true, "timeout".into())),
            Err(e) => return Err((true, e.to_string())),
        };
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, format!("http {status}")));
        }
        let parsed: ChatResponseBody = resp
            .json()
            .await
            .map_err(|e| (false, format!("bad reply body: {e}")))?;
        let mut out = Vec::with_capacity(parsed.choices.len());
        for choice in parsed.choices {
            let text = choice
                .message
                .content
                .ok_or_else(|| (false, "choice without content".to_string()))?;
            let finish_reason = match choice.finish_reason.as_deref() {
                Some("stop") | None => FinishReason::Stop,
                Some("length") => FinishReason::Length,
                Some(_) => FinishReason::Other,
            };
            out.push(Completion { text, finish_reason });
        }
        Ok(out)
    }

    /// Issue one backend request with exponential-backoff retries.
    async fn request_batch(
        &self,
        req: &CompletionRequest,
        prefix: &str,
        n: u32,
    ) -> Result<Vec<Completion>, ProviderError> {
        let url = format!(
            "{}/v1/chat/completions",
            self.config.endpoint_url.trim_end_matches('/')
        );
        let body = ChatRequestBody {
            model: &self.config.model_name,
            messages: Self::build_messages(req, prefix),
            temperature: req.sampling.temperature,
            top_p: req.sampling.top_p,
            n,
            max_tokens: req.sampling.max_tokens,
            stop: req.sampling.stop.clone(),
            seed: req.seed,
        };

        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let delay = self.config.retry.backoff_base_ms << (attempt - 2).min(16);
                tokio::time::sleep(Duration::from_millis(delay)).await;
            }
            match self.attempt(&url, &body).await {
                Ok(out) => return Ok(out),
                Err((true, msg)) => last_error = msg,
                Err((false, msg)) => return Err(ProviderError::MalformedReply(msg)),
            }
        }
        Err(ProviderError::Unavailable { attempts: max_attempts, last_error })
    }
}

#[async_trait]
impl RolloutProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn sample_completions(
        &self,
        req: &CompletionRequest,
    ) -> Result<Vec<Completion>, ProviderError> {
        let want = req.n_samples as usize;
        let prefix = crate::model::join_steps(&req.prefix_steps);

        if !self.config.native_n {
            let singles = (0..want)
                .map(|_| self.request_batch(req, &prefix, 1))
                .collect::<Vec<_>>();
            let results = futures::future::try_join_all(singles).await?;
            let mut out: Vec<Completion> = results.into_iter().flatten().collect();
            if out.len() < want {
                return Err(ProviderError::MalformedReply(format!(
                    "backend returned {} of {want} single-sample completions",
                    out.len()
                )));
            }
            out.truncate(want);
            return Ok(out);
        }

        // Native-n path: top up until the batch is full. Every accepted
        // choice is kept exactly once, so retried attempts never duplicate
        // results.
        let mut out: Vec<Completion> = Vec::with_capacity(want);
        while out.len() < want {
            let missing = (want - out.len()) as u32;
            let batch = self.request_batch(req, &prefix, missing).await?;
            if batch.is_empty() {
                return Err(ProviderError::MalformedReply(
                    "backend returned an empty choice list".into(),
                ));
            }
            out.extend(batch.into_iter().take(want - out.len()));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Instrumented wrapper
// ---------------------------------------------------------------------------

/// Wraps any provider and counts traffic, splitting generation requests
/// (empty prefix) from rollout requests. Used to verify budget identities.
pub struct CountingProvider<P> {
    inner: P,
    pub generation_requests: AtomicU64,
    pub generation_samples: AtomicU64,
    pub rollout_requests: AtomicU64,
    pub rollout_samples: AtomicU64,
    /// (question_id, prefix joined text) for every rollout request.
    pub rollout_prefixes: Mutex<Vec<(String, String)>>,
}

impl<P> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            generation_requests: AtomicU64::new(0),
            generation_samples: AtomicU64::new(0),
            rollout_requests: AtomicU64::new(0),
            rollout_samples: AtomicU64::new(0),
            rollout_prefixes: Mutex::new(Vec::new()),
        }
    }

    pub fn rollout_sample_count(&self) -> u64 {
        self.rollout_samples.load(Ordering::SeqCst)
    }

    pub fn generation_sample_count(&self) -> u64 {
        self.generation_samples.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl<P: RolloutProvider> RolloutProvider for CountingProvider<P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    async fn sample_completions(
        &self,
        req: &CompletionRequest,
    ) -> Result<Vec<Completion>, ProviderError> {
        let result = self.inner.sample_completions(req).await?;
        if req.prefix_steps.is_empty() {
            self.generation_requests.fetch_add(1, Ordering::SeqCst);
            self.generation_samples.fetch_add(result.len() as u64, Ordering::SeqCst);
        } else {
            self.rollout_requests.fetch_add(1, Ordering::SeqCst);
            self.rollout_samples.fetch_add(result.len() as u64, Ordering::SeqCst);
            self.rollout_prefixes.lock().unwrap().push((
                req.question.id.clone(),
                crate::model::join_steps(&req.prefix_steps),
            ));
        }
        Ok(result)
    }
}
