//! Noise-distribution analysis: classify predicted vs true first-error
//! locations, bucket by self-confidence, and emit distribution reports
//! (CSV, optionally SVG bar charts).
//!
//! The seeded study annotates corpora the simulated completer generated
//! about itself (generator = completer), so response correctness rates
//! track the completer's capability the way they do for a real model.

use crate::annotate::{annotate_response, AnnotateError};
use crate::chart;
use crate::confidence::{ConfidenceBucket, SelfConfidence};
use crate::model::{
    DelimiterPolicy, ErrorLocation, JudgeMode, Response, SamplingParams, Verdict,
};
use crate::provider::{CompletionRequest, RolloutProvider};
use crate::simworld::{gen_world, true_error_from_steps, SimCompleterParams, SimError, SimProvider};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("no records to report on")]
    EmptyInput,
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Primary classification of one annotated response against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCategory {
    Clean,
    UnderEstimation,
    OverEstimation,
    NoisyPositive,
}

impl std::fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NoiseCategory::Clean => "clean",
            NoiseCategory::UnderEstimation => "under_estimation",
            NoiseCategory::OverEstimation => "over_estimation",
            NoiseCategory::NoisyPositive => "noisy_positive",
        };
        write!(f, "{s}")
    }
}

/// Category of (predicted, true) first-error locations. `NoError` orders
/// as +infinity, so a finite prediction on a fully correct response counts
/// as under-estimation.
pub fn classify(t_pred: ErrorLocation, t_true: ErrorLocation) -> NoiseCategory {
    if t_pred == t_true {
        return NoiseCategory::Clean;
    }
    if t_pred == ErrorLocation::NoError {
        return NoiseCategory::NoisyPositive;
    }
    if t_pred < t_true {
        NoiseCategory::UnderEstimation
    } else {
        NoiseCategory::OverEstimation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub question_id: String,
    pub t_pred: ErrorLocation,
    pub t_true: ErrorLocation,
    pub sc_bucket: ConfidenceBucket,
    pub category: NoiseCategory,
    /// Error detected at the wrong step: prediction finite and off-target.
    pub inaccurate_negative: bool,
    /// `t_pred - t_true` when both are finite and differ.
    pub deviation: Option<i64>,
}

impl NoiseRecord {
    pub fn new(
        question_id: impl Into<String>,
        t_pred: ErrorLocation,
        t_true: ErrorLocation,
        sc_bucket: ConfidenceBucket,
    ) -> Self {
        let category = classify(t_pred, t_true);
        let inaccurate_negative = t_pred != ErrorLocation::NoError && t_pred != t_true;
        let deviation = match (t_pred, t_true) {
            (ErrorLocation::AtStep(p), ErrorLocation::AtStep(t)) if p != t => {
                Some(p as i64 - t as i64)
            }
            _ => None,
        };
        Self {
            question_id: question_id.into(),
            t_pred,
            t_true,
            sc_bucket,
            category,
            inaccurate_negative,
            deviation,
        }
    }
}

/// Aggregated distributions over a record set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionReport {
    pub total: u64,
    /// Count per (bucket, category).
    pub bucket_category_counts: BTreeMap<ConfidenceBucket, BTreeMap<NoiseCategory, u64>>,
    /// Among records predicted fully correct: noisy-positive rate per
    /// bucket as (noisy, total predicted-positive).
    pub noisy_positive: BTreeMap<ConfidenceBucket, (u64, u64)>,
    /// Deviation histogram of high-bucket inaccurate negatives.
    pub deviation_high_bucket: BTreeMap<i64, u64>,
}

impl DistributionReport {
    pub fn category_count(&self, bucket: ConfidenceBucket, category: NoiseCategory) -> u64 {
        self.bucket_category_counts
            .get(&bucket)
            .and_then(|m| m.get(&category))
            .copied()
            .unwrap_or(0)
    }

    pub fn bucket_total(&self, bucket: ConfidenceBucket) -> u64 {
        self.bucket_category_counts
            .get(&bucket)
            .map(|m| m.values().sum())
            .unwrap_or(0)
    }

    pub fn noisy_positive_rate(&self, bucket: ConfidenceBucket) -> Option<f64> {
        self.noisy_positive
            .get(&bucket)
            .filter(|(_, total)| *total > 0)
            .map(|(noisy, total)| *noisy as f64 / *total as f64)
    }
}

pub fn distribution_report(records: &[NoiseRecord]) -> Result<DistributionReport, NoiseError> {
    if records.is_empty() {
        return Err(NoiseError::EmptyInput);
    }
    let mut bucket_category_counts: BTreeMap<ConfidenceBucket, BTreeMap<NoiseCategory, u64>> =
        BTreeMap::new();
    let mut noisy_positive: BTreeMap<ConfidenceBucket, (u64, u64)> = BTreeMap::new();
    let mut deviation_high_bucket: BTreeMap<i64, u64> = BTreeMap::new();
    for r in records {
        *bucket_category_counts
            .entry(r.sc_bucket)
            .or_default()
            .entry(r.category)
            .or_default() += 1;
        if r.t_pred == ErrorLocation::NoError {
            let slot = noisy_positive.entry(r.sc_bucket).or_insert((0, 0));
            slot.1 += 1;
            if r.t_true != ErrorLocation::NoError {
                slot.0 += 1;
            }
        }
        if r.sc_bucket == ConfidenceBucket::High && r.inaccurate_negative {
            if let Some(dev) = r.deviation {
                *deviation_high_bucket.entry(dev).or_default() += 1;
            }
        }
    }
    Ok(DistributionReport {
        total: records.len() as u64,
        bucket_category_counts,
        noisy_positive,
        deviation_high_bucket,
    })
}

/// Deviation histogram over inaccurate negatives, optionally restricted to
/// one confidence bucket.
pub fn deviation_histogram(
    records: &[NoiseRecord],
    bucket: Option<ConfidenceBucket>,
) -> BTreeMap<i64, u64> {
    let mut hist = BTreeMap::new();
    for r in records {
        if !r.inaccurate_negative {
            continue;
        }
        if let Some(b) = bucket {
            if r.sc_bucket != b {
                continue;
            }
        }
        if let Some(dev) = r.deviation {
            *hist.entry(dev).or_default() += 1;
        }
    }
    hist
}

/// Write the three report panels as CSV files (plus optional SVG charts)
/// into `out_dir`.
pub fn write_report_files(
    report: &DistributionReport,
    out_dir: &Path,
    svg: bool,
) -> Result<(), NoiseError> {
    std::fs::create_dir_all(out_dir)?;

    let mut by_category = std::io::BufWriter::new(std::fs::File::create(
        out_dir.join("bucket_category.csv"),
    )?);
    writeln!(by_category, "bucket,category,count")?;
    for (bucket, cats) in &report.bucket_category_counts {
        for (cat, count) in cats {
            writeln!(by_category, "{bucket},{cat},{count}")?;
        }
    }
    by_category.flush()?;

    let mut np = std::io::BufWriter::new(std::fs::File::create(
        out_dir.join("noisy_positive_rate.csv"),
    )?);
    writeln!(np, "bucket,noisy_positive_rate")?;
    for (bucket, (noisy, total)) in &report.noisy_positive {
        let rate = if *total > 0 { *noisy as f64 / *total as f64 } else { 0.0 };
        writeln!(np, "{bucket},{rate:.6}")?;
    }
    np.flush()?;

    let mut dev = std::io::BufWriter::new(std::fs::File::create(
        out_dir.join("deviation_hist.csv"),
    )?);
    writeln!(dev, "deviation,count")?;
    for (d, count) in &report.deviation_high_bucket {
        writeln!(dev, "{d},{count}")?;
    }
    dev.flush()?;

    if svg {
        let mut bars: Vec<(String, f64)> = Vec::new();
        for (bucket, cats) in &report.bucket_category_counts {
            for (cat, count) in cats {
                bars.push((format!("{bucket}/{cat}"), *count as f64));
            }
        }
        chart::write_bar_chart(
            &out_dir.join("bucket_category.svg"),
            "noise categories by confidence bucket",
            &bars,
        )?;

        let np_bars: Vec<(String, f64)> = report
            .noisy_positive
            .iter()
            .map(|(b, (noisy, total))| {
                let rate = if *total > 0 { *noisy as f64 / *total as f64 } else { 0.0 };
                (b.to_string(), rate)
            })
            .collect();
        chart::write_bar_chart(
            &out_dir.join("noisy_positive_rate.svg"),
            "noisy-positive rate by confidence bucket",
            &np_bars,
        )?;

        let dev_bars: Vec<(String, f64)> = report
            .deviation_high_bucket
            .iter()
            .map(|(d, c)| (d.to_string(), *c as f64))
            .collect();
        chart::write_bar_chart(
            &out_dir.join("deviation_hist.svg"),
            "deviation of high-confidence inaccurate negatives",
            &dev_bars,
        )?;
    }
    Ok(())
}

/// One sub-world of a study: a completer configuration plus corpus sizing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyWorld {
    pub params: SimCompleterParams,
    pub n_questions: u32,
    pub n_responses: u32,
    pub step_range: (u32, u32),
}

/// Generate self-annotated noise records across one or more simulated
/// worlds. For each question the completer generates its own responses,
/// self-confidence comes from that same pool, and every response is
/// annotated (fully correct ones included) to obtain `t_pred`.
pub async fn run_noise_study(
    worlds: &[StudyWorld],
    k: u32,
    sampling: &SamplingParams,
) -> Result<Vec<NoiseRecord>, NoiseError> {
    let mut records = Vec::new();
    for (wi, spec) in worlds.iter().enumerate() {
        // Question corpus only; responses come from the completer itself.
        let world = Arc::new(gen_world(
            spec.params.seed ^ (wi as u64).wrapping_mul(0x9e37_79b9),
            spec.n_questions,
            1,
            spec.step_range,
            0.5,
        )?);
        let provider = SimProvider::new(spec.params, world.clone());
        for problem in &world.problems {
            let req = CompletionRequest {
                question: problem.question.clone(),
                prefix_steps: Vec::new(),
                n_samples: spec.n_responses,
                sampling: sampling.clone(),
                seed: None,
            };
            let completions = provider.sample_completions(&req).await.map_err(AnnotateError::from)?;
            let mut responses = Vec::with_capacity(completions.len());
            let mut correct = 0u32;
            for c in &completions {
                let r = Response::from_text(
                    &problem.question,
                    &c.text,
                    provider.id(),
                    sampling.clone(),
                    JudgeMode::ExactNormalized,
                    &DelimiterPolicy::BlankLine,
                )
                .expect("sim completions are never empty");
                if r.verdict == Verdict::Correct {
                    correct += 1;
                }
                responses.push(r);
            }
            let sc = SelfConfidence::from_counts(
                &problem.question.id,
                provider.id(),
                correct,
                completions.len() as u32,
            );
            for r in &responses {
                let t_true = true_error_from_steps(&r.steps);
                let scores =
                    annotate_response(&problem.question, r, k, &provider, sampling, JudgeMode::ExactNormalized)
                        .await?;
                records.push(NoiseRecord::new(
                    &problem.question.id,
                    scores.first_zero,
                    t_true,
                    sc.bucket(),
                ));
            }
        }
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[NoiseRecord]) -> Result<(), NoiseError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).unwrap())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<NoiseRecord>, NoiseError> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: NoiseRecord = serde_json::from_str(&line)
            .map_err(|e| NoiseError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
        records.push(r);
    }
    Ok(records)
}
