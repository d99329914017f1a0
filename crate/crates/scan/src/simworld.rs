//! Seeded synthetic problem world with ground-truth step correctness and a
//! parameterized stochastic completer.
//!
//! The completer kernel is deliberately simple: a rollout from a prefix
//! containing `e` incorrect steps succeeds with probability
//! `p_solve * p_fix^e`. Low `p_solve` produces early error detection
//! (under-estimation); high `p_fix` relative to `p_solve` delays detection
//! past the true error (over-estimation). Step texts embed an `[ok]`/`[err]`
//! tag so error counting and ground-truth recovery work on any prefix,
//! including completions the simulator generated itself.
//!
//! All randomness is derived by hashing `(seed, question id, prefix
//! signature, sample index)`, so concurrent calls are deterministic and
//! order-independent.

use crate::model::{ErrorLocation, Question, Step};
use crate::provider::{Completion, CompletionRequest, FinishReason, ProviderError, RolloutProvider};
use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const WORLD_SCHEMA_VERSION: u32 = 1;

const OK_TAG: &str = "[ok]";
const ERR_TAG: &str = "[err]";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("world schema version {found} unsupported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Knobs of the stochastic completer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimCompleterParams {
    /// Probability a rollout from an all-correct prefix reaches the gold
    /// answer (the capability/difficulty knob).
    pub p_solve: f64,
    /// Per-accumulated-error multiplicative correction probability.
    pub p_fix: f64,
    pub seed: u64,
}

impl SimCompleterParams {
    pub fn new(p_solve: f64, p_fix: f64, seed: u64) -> Self {
        Self { p_solve, p_fix, seed }
    }
}

/// Success probability of one rollout from a prefix with `e` incorrect
/// steps: `p_solve * p_fix^e`, clamped to [0, 1].
pub fn sim_rollout_success_prob(prefix_error_count: u32, params: &SimCompleterParams) -> f64 {
    (params.p_solve * params.p_fix.powi(prefix_error_count as i32)).clamp(0.0, 1.0)
}

/// A scripted response with its ground-truth first error. Steps at and
/// after the error location are all tagged incorrect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResponse {
    pub steps: Vec<Step>,
    pub t_true: ErrorLocation,
    pub final_answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProblem {
    pub question: Question,
    pub scripted_responses: Vec<SimResponse>,
}

/// Immutable world fixture; serializable for reuse across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub schema_version: u32,
    pub seed: u64,
    pub step_range: (u32, u32),
    pub problems: Vec<SimProblem>,
}

impl SimWorld {
    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let world: SimWorld = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if world.schema_version != WORLD_SCHEMA_VERSION {
            return Err(SimError::SchemaVersion {
                found: world.schema_version,
                expected: WORLD_SCHEMA_VERSION,
            });
        }
        Ok(world)
    }

    pub fn questions(&self) -> Vec<Question> {
        self.problems.iter().map(|p| p.question.clone()).collect()
    }
}

fn step_text(index: u32, nonce: &str, correct: bool) -> String {
    let tag = if correct { OK_TAG } else { ERR_TAG };
    format!("sim step {index}/{nonce} {tag}")
}

/// Steps for one response. The nonce makes texts unique per response, so
/// rollout draws from structurally identical responses stay independent
/// and prefixes attribute back to exactly one response.
fn build_steps(n: u32, t_true: ErrorLocation, answer: &str, nonce: &str) -> Vec<Step> {
    (1..=n)
        .map(|i| {
            let correct = match t_true {
                ErrorLocation::NoError => true,
                ErrorLocation::AtStep(t) => i < t,
            };
            let mut text = step_text(i, nonce, correct);
            if i == n {
                // The answer rides on the last line of the final step so
                // blank-line segmentation keeps it attached.
                text.push('\n');
                text.push_str(answer);
            }
            Step { index: i, text }
        })
        .collect()
}

/// Number of steps in the prefix tagged incorrect.
pub fn count_prefix_errors(steps: &[Step]) -> u32 {
    steps.iter().filter(|s| s.text.contains(ERR_TAG)).count() as u32
}

/// Ground-truth first error recovered from tagged step texts.
pub fn true_error_from_steps(steps: &[Step]) -> ErrorLocation {
    for (i, s) in steps.iter().enumerate() {
        if s.text.contains(ERR_TAG) {
            return ErrorLocation::AtStep(i as u32 + 1);
        }
    }
    ErrorLocation::NoError
}

/// Generate a deterministic world: `n_problems` questions, each with
/// `n_responses_per_problem` scripted responses. The fraction of erroneous
/// responses approaches `error_rate`, with `t_true` uniform over 1..n.
pub fn gen_world(
    seed: u64,
    n_problems: u32,
    n_responses_per_problem: u32,
    step_count_range: (u32, u32),
    error_rate: f64,
) -> Result<SimWorld, SimError> {
    let (lo, hi) = step_count_range;
    if lo == 0 || hi < lo {
        return Err(SimError::InvalidRange(format!("step_count_range [{lo}, {hi}]")));
    }
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(SimError::InvalidRange(format!("error_rate {error_rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut problems = Vec::with_capacity(n_problems as usize);
    for qi in 0..n_problems {
        let gold: u32 = rng.random_range(100..1000);
        let question = Question {
            id: format!("sim-q{qi:05}"),
            text: format!("simulated problem {qi}"),
            gold_answer: gold.to_string(),
            source: "simworld".to_string(),
            meta: Default::default(),
        };
        let mut scripted = Vec::with_capacity(n_responses_per_problem as usize);
        for rj in 0..n_responses_per_problem {
            let n = rng.random_range(lo..=hi);
            let erroneous = rng.random_bool(error_rate);
            let t_true = if erroneous {
                ErrorLocation::AtStep(rng.random_range(1..=n))
            } else {
                ErrorLocation::NoError
            };
            let answer = match t_true {
                ErrorLocation::NoError => gold.to_string(),
                ErrorLocation::AtStep(_) => (gold + 1 + rj).to_string(),
            };
            let nonce = format!("r{rj}");
            scripted.push(SimResponse {
                steps: build_steps(n, t_true, &answer, &nonce),
                t_true,
                final_answer: answer,
            });
        }
        problems.push(SimProblem { question, scripted_responses: scripted });
    }
    Ok(SimWorld {
        schema_version: WORLD_SCHEMA_VERSION,
        seed,
        step_range: step_count_range,
        problems,
    })
}

/// Uniform draw in [0, 1) from a stable hash of the given parts.
fn unit_hash(seed: u64, parts: &[&[u8]]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

fn prefix_signature(steps: &[Step]) -> Vec<u8> {
    let mut h = Sha256::new();
    for s in steps {
        h.update((s.text.len() as u64).to_le_bytes());
        h.update(s.text.as_bytes());
    }
    h.finalize().to_vec()
}

/// Completer over a [`SimWorld`]. Output is a pure function of
/// (request, params.seed).
pub struct SimProvider {
    params: SimCompleterParams,
    world: Arc<SimWorld>,
    gold_by_id: HashMap<String, String>,
    id: String,
}

impl SimProvider {
    pub fn new(params: SimCompleterParams, world: Arc<SimWorld>) -> Self {
        Self::with_id(params, world, "sim".to_string())
    }

    pub fn with_id(params: SimCompleterParams, world: Arc<SimWorld>, id: String) -> Self {
        let gold_by_id = world
            .problems
            .iter()
            .map(|p| (p.question.id.clone(), p.question.gold_answer.clone()))
            .collect();
        Self { params, world, gold_by_id, id }
    }

    pub fn params(&self) -> &SimCompleterParams {
        &self.params
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    fn draw(&self, req: &CompletionRequest, sig: &[u8], sample: u32, label: &str) -> f64 {
        unit_hash(
            self.params.seed,
            &[
                req.question.id.as_bytes(),
                sig,
                &sample.to_le_bytes(),
                label.as_bytes(),
                format!("{}|{}", req.sampling.temperature, req.sampling.top_p).as_bytes(),
            ],
        )
    }

    /// A full solution sampled from scratch: success emits the gold answer
    /// with all-correct steps; failure places the error tail uniformly.
    fn generate_full(&self, req: &CompletionRequest, gold: &str, sample: u32) -> Completion {
        let sig = prefix_signature(&[]);
        let success = self.draw(req, &sig, sample, "solve") < self.params.p_solve;
        let (lo, hi) = self.world.step_range;
        let span = (hi - lo + 1) as u64;
        let n = lo + ((self.draw(req, &sig, sample, "len") * span as f64) as u64).min(span - 1) as u32;
        let (t_true, answer) = if success {
            (ErrorLocation::NoError, gold.to_string())
        } else {
            let t = 1 + ((self.draw(req, &sig, sample, "terr") * n as f64) as u64).min(n as u64 - 1) as u32;
            let gold_num: u64 = gold.parse().unwrap_or(0);
            let offset = 1 + ((self.draw(req, &sig, sample, "wrong") * 7.0) as u64).min(6);
            (ErrorLocation::AtStep(t), (gold_num + offset).to_string())
        };
        let steps = build_steps(n, t_true, &answer, &format!("g{sample}"));
        Completion { text: crate::model::join_steps(&steps), finish_reason: FinishReason::Stop }
    }

    /// A continuation from a non-empty prefix: succeeds with probability
    /// `p_solve * p_fix^e` where `e` counts incorrect prefix steps.
    fn continue_from(&self, req: &CompletionRequest, gold: &str, sample: u32) -> Completion {
        let sig = prefix_signature(&req.prefix_steps);
        let e = count_prefix_errors(&req.prefix_steps);
        let p = sim_rollout_success_prob(e, &self.params);
        let success = self.draw(req, &sig, sample, "rollout") < p;
        let next = req.prefix_steps.len() as u32 + 1;
        let answer = if success {
            gold.to_string()
        } else {
            let gold_num: u64 = gold.parse().unwrap_or(0);
            let offset = 1 + ((self.draw(req, &sig, sample, "wrong") * 7.0) as u64).min(6);
            (gold_num + offset).to_string()
        };
        let text = format!("{}\n{}", step_text(next, "c", success), answer);
        Completion { text, finish_reason: FinishReason::Stop }
    }
}

#[async_trait]
impl RolloutProvider for SimProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn sample_completions(
        &self,
        req: &CompletionRequest,
    ) -> Result<Vec<Completion>, ProviderError> {
        let gold = self
            .gold_by_id
            .get(&req.question.id)
            .ok_or_else(|| ProviderError::UnknownQuestion(req.question.id.clone()))?;
        let out = (0..req.n_samples)
            .map(|i| {
                if req.prefix_steps.is_empty() {
                    self.generate_full(req, gold, i)
                } else {
                    self.continue_from(req, gold, i)
                }
            })
            .collect();
        Ok(out)
    }
}
