//! Self-confidence estimation: the empirical solve rate of a provider on a
//! question, plus the three-level bucketing used throughout the noise
//! analysis.

use crate::model::{extract_final_answer, judge_answer, JudgeMode, Question, SamplingParams};
use crate::provider::{CompletionRequest, ProviderError, RolloutProvider};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad cache line: {0}")]
    BadCacheLine(String),
}

/// Empirical solve rate of `provider_id` on `question_id` over `n_samples`
/// fresh completions. The value is always an integer multiple of
/// `1/n_samples`; the correct count is kept so downstream reweighting can
/// stay in integer arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfConfidence {
    pub question_id: String,
    pub provider_id: String,
    pub n_samples: u32,
    pub correct: u32,
    /// Set when every completion was unjudgeable; the value is then 0 and
    /// the question should be treated as unusable rather than hard.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub all_unjudgeable: bool,
}

impl SelfConfidence {
    pub fn from_counts(
        question_id: impl Into<String>,
        provider_id: impl Into<String>,
        correct: u32,
        n_samples: u32,
    ) -> Self {
        assert!(n_samples >= 1 && correct <= n_samples);
        Self {
            question_id: question_id.into(),
            provider_id: provider_id.into(),
            n_samples,
            correct,
            all_unjudgeable: false,
        }
    }

    pub fn value(&self) -> f64 {
        self.correct as f64 / self.n_samples as f64
    }

    pub fn bucket(&self) -> ConfidenceBucket {
        bucket_value(self.value())
    }
}

/// Confidence bands: Low = [0, 0.25], Medium = (0.25, 0.75), High = [0.75, 1].
/// Both boundaries belong to the closed outer bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceBucket {
    Low,
    Medium,
    High,
}

impl std::fmt::Display for ConfidenceBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfidenceBucket::Low => write!(f, "low"),
            ConfidenceBucket::Medium => write!(f, "medium"),
            ConfidenceBucket::High => write!(f, "high"),
        }
    }
}

pub fn bucket_value(value: f64) -> ConfidenceBucket {
    if value <= 0.25 {
        ConfidenceBucket::Low
    } else if value < 0.75 {
        ConfidenceBucket::Medium
    } else {
        ConfidenceBucket::High
    }
}

pub fn bucket(sc: &SelfConfidence) -> ConfidenceBucket {
    sc.bucket()
}

/// Estimate self-confidence by sampling `n` completions with an empty
/// prefix and judging each final answer against the gold.
pub async fn estimate_self_confidence(
    question: &Question,
    provider: &dyn RolloutProvider,
    n: u32,
    sampling: &SamplingParams,
    mode: JudgeMode,
) -> Result<SelfConfidence, ConfidenceError> {
    assert!(n >= 1, "self-confidence needs at least one sample");
    let req = CompletionRequest {
        question: question.clone(),
        prefix_steps: Vec::new(),
        n_samples: n,
        sampling: sampling.clone(),
        seed: None,
    };
    let completions = provider.sample_completions(&req).await?;
    let mut correct = 0u32;
    let mut judgeable = 0u32;
    for c in &completions {
        if let Some(ans) = extract_final_answer(&c.text, mode) {
            judgeable += 1;
            if judge_answer(&ans, &question.gold_answer, JudgeMode::ExactNormalized) {
                correct += 1;
            }
        }
    }
    Ok(SelfConfidence {
        question_id: question.id.clone(),
        provider_id: provider.id().to_string(),
        n_samples: n,
        correct,
        all_unjudgeable: judgeable == 0,
    })
}

/// JSONL line of the persisted cache.
#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    question_id: String,
    provider_id: String,
    n: u32,
    value: f64,
}

/// Concurrent-safe cache keyed by (provider, question, sampling params),
/// reused between the generation and annotation phases and persisted as a
/// JSONL sidecar.
#[derive(Default)]
pub struct ScCache {
    inner: Mutex<HashMap<(String, String, String), SelfConfidence>>,
}

impl ScCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(provider_id: &str, question_id: &str, sampling: &SamplingParams) -> (String, String, String) {
        (provider_id.to_string(), question_id.to_string(), sampling.cache_key())
    }

    pub fn get(
        &self,
        provider_id: &str,
        question_id: &str,
        sampling: &SamplingParams,
    ) -> Option<SelfConfidence> {
        self.inner
            .lock()
            .unwrap()
            .get(&Self::key(provider_id, question_id, sampling))
            .cloned()
    }

    pub fn insert(&self, sampling: &SamplingParams, sc: SelfConfidence) {
        let key = Self::key(&sc.provider_id, &sc.question_id, sampling);
        self.inner.lock().unwrap().insert(key, sc);
    }

    pub async fn get_or_estimate(
        &self,
        question: &Question,
        provider: &dyn RolloutProvider,
        n: u32,
        sampling: &SamplingParams,
        mode: JudgeMode,
    ) -> Result<SelfConfidence, ConfidenceError> {
        if let Some(hit) = self.get(provider.id(), &question.id, sampling) {
            return Ok(hit);
        }
        let sc = estimate_self_confidence(question, provider, n, sampling, mode).await?;
        self.insert(sampling, sc.clone());
        Ok(sc)
    }

    /// Write every entry as a JSONL sidecar, sorted for reproducibility.
    pub fn save(&self, path: &Path) -> Result<(), ConfidenceError> {
        let map = self.inner.lock().unwrap();
        let mut entries: Vec<&SelfConfidence> = map.values().collect();
        entries.sort_by(|a, b| {
            (&a.provider_id, &a.question_id, a.n_samples)
                .cmp(&(&b.provider_id, &b.question_id, b.n_samples))
        });
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for sc in entries {
            let line = CacheLine {
                question_id: sc.question_id.clone(),
                provider_id: sc.provider_id.clone(),
                n: sc.n_samples,
                value: sc.value(),
            };
            writeln!(out, "{}", serde_json::to_string(&line).unwrap())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Load a sidecar written by [`ScCache::save`]. Entries are keyed under
    /// the given sampling params (the sidecar stores one pool per file).
    pub fn load(path: &Path, sampling: &SamplingParams) -> Result<Self, ConfidenceError> {
        let cache = Self::new();
        let file = std::fs::File::open(path)?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine = serde_json::from_str(&line)
                .map_err(|e| ConfidenceError::BadCacheLine(format!("{e}: {line}")))?;
            let correct = (parsed.value * parsed.n as f64).round() as u32;
            cache.insert(
                sampling,
                SelfConfidence::from_counts(parsed.question_id, parsed.provider_id, correct, parsed.n),
            );
        }
        Ok(cache)
    }
}
