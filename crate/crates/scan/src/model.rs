//! Core domain types shared across the toolkit: questions, segmented
//! responses, answer judging, and first-error locations.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::LazyLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("response text contains no non-empty step segments")]
    EmptyResponse,
    #[error("question `{0}` has an empty gold answer")]
    EmptyGoldAnswer(String),
}

/// A problem with a known gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub gold_answer: String,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub meta: std::collections::BTreeMap<String, String>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_answer: gold.into(),
            source: String::new(),
            meta: Default::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.gold_answer.trim().is_empty() {
            return Err(ModelError::EmptyGoldAnswer(self.id.clone()));
        }
        Ok(())
    }
}

/// One reasoning step of a response. Indices are 1-based and contiguous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: u32,
    pub text: String,
}

/// Sampling parameters forwarded to a completion backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        // Rollout defaults; generation runs typically override temperature.
        Self { temperature: 0.7, top_p: 0.8, max_tokens: 1024, stop: Vec::new() }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }

    /// Stable cache key covering every field.
    pub fn cache_key(&self) -> String {
        format!(
            "t{}-p{}-m{}-s{}",
            self.temperature,
            self.top_p,
            self.max_tokens,
            self.stop.join("\u{1f}")
        )
    }
}

/// Verdict of a judged response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    /// No final answer could be extracted from the response text.
    Unjudgeable,
}

/// First-error location of a response; `NoError` marks a fully correct
/// response and orders after every finite step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorLocation {
    AtStep(u32),
    NoError,
}

impl ErrorLocation {
    pub fn as_option(self) -> Option<u32> {
        match self {
            ErrorLocation::AtStep(t) => Some(t),
            ErrorLocation::NoError => None,
        }
    }

    pub fn from_option(v: Option<u32>) -> Self {
        match v {
            Some(t) => ErrorLocation::AtStep(t),
            None => ErrorLocation::NoError,
        }
    }
}

impl PartialOrd for ErrorLocation {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ErrorLocation {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use ErrorLocation::*;
        match (self, other) {
            (AtStep(a), AtStep(b)) => a.cmp(b),
            (AtStep(_), NoError) => std::cmp::Ordering::Less,
            (NoError, AtStep(_)) => std::cmp::Ordering::Greater,
            (NoError, NoError) => std::cmp::Ordering::Equal,
        }
    }
}

impl fmt::Display for ErrorLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorLocation::AtStep(t) => write!(f, "{t}"),
            ErrorLocation::NoError => write!(f, "inf"),
        }
    }
}

impl Serialize for ErrorLocation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_option().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ErrorLocation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Self::from_option(Option::<u32>::deserialize(d)?))
    }
}

/// A multi-step candidate solution with its judged verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub question_id: String,
    pub steps: Vec<Step>,
    pub final_answer: Option<String>,
    pub verdict: Verdict,
    pub generator_id: String,
    pub sampling: SamplingParams,
}

impl Response {
    /// Segment a raw completion into steps, extract its final answer, and
    /// judge it against the question's gold answer. Re-judging the same
    /// text is idempotent.
    pub fn from_text(
        question: &Question,
        text: &str,
        generator_id: impl Into<String>,
        sampling: SamplingParams,
        mode: JudgeMode,
        policy: &DelimiterPolicy,
    ) -> Result<Self, ModelError> {
        let steps = split_steps(text, policy)?;
        let final_answer = extract_final_answer(text, mode);
        let verdict = match &final_answer {
            Some(ans) => {
                if judge_answer(ans, &question.gold_answer, JudgeMode::ExactNormalized) {
                    Verdict::Correct
                } else {
                    Verdict::Incorrect
                }
            }
            None => Verdict::Unjudgeable,
        };
        Ok(Self {
            question_id: question.id.clone(),
            steps,
            final_answer,
            verdict,
            generator_id: generator_id.into(),
            sampling,
        })
    }
}

/// Comparison mode for answer judging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    /// Compare the candidate string directly after normalization.
    ExactNormalized,
    /// Extract the last `\boxed{...}` span (falling back to the last
    /// numeric token) before comparing.
    BoxedMath,
}

/// Step segmentation rule for raw solution text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelimiterPolicy {
    #[default]
    BlankLine,
    ExplicitMarkers(Vec<String>),
}

static NUMERIC_TOKEN: LazyLock<regex::Regex> =
    LazyLock::new(|| regex::Regex::new(r"-?\d[\d,]*(?:\.\d+)?(?:/\d+)?").unwrap());

/// Normalize an answer string for comparison: trims whitespace, strips
/// thousands separators, reduces `p/q` fractions to lowest terms, and trims
/// trailing zeros from decimals. Anything non-numeric is compared verbatim
/// after trimming; no symbolic equivalence is attempted.
pub fn normalize_answer(raw: &str) -> String {
    let s = raw.trim();
    if let Some(frac) = normalize_fraction(s) {
        return frac;
    }
    if let Some(num) = normalize_numeric(s) {
        return num;
    }
    s.to_string()
}

fn normalize_fraction(s: &str) -> Option<String> {
    let (num, den) = s.split_once('/')?;
    let p: i128 = num.trim().parse().ok()?;
    let q: i128 = den.trim().parse().ok()?;
    if q == 0 {
        return None;
    }
    let g = gcd(p.unsigned_abs(), q.unsigned_abs()) as i128;
    let sign = if (p < 0) != (q < 0) { -1 } else { 1 };
    let (p, q) = (sign * (p.abs() / g), q.abs() / g);
    Some(if q == 1 { p.to_string() } else { format!("{p}/{q}") })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

fn normalize_numeric(s: &str) -> Option<String> {
    let stripped: String = s.chars().filter(|c| *c != ',').collect();
    let body = stripped.strip_prefix('-').unwrap_or(&stripped);
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if int_part.is_empty() && frac_part.is_none() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    if let Some(f) = frac_part {
        if f.is_empty() || !f.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
    }
    let neg = stripped.starts_with('-');
    let int_norm = {
        let t = int_part.trim_start_matches('0');
        if t.is_empty() { "0" } else { t }
    };
    let frac_norm = frac_part.map(|f| f.trim_end_matches('0')).unwrap_or("");
    let mut out = String::new();
    if neg && !(int_norm == "0" && frac_norm.is_empty()) {
        out.push('-');
    }
    out.push_str(int_norm);
    if !frac_norm.is_empty() {
        out.push('.');
        out.push_str(frac_norm);
    }
    Some(out)
}

/// Extract the content of the last `\boxed{...}` span, handling nested
/// braces.
fn extract_boxed(text: &str) -> Option<String> {
    let start = text.rfind("\\boxed{")?;
    let inner = &text[start + "\\boxed{".len()..];
    let mut depth = 1usize;
    for (i, c) in inner.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(inner[..i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Pull a final answer out of raw completion text. Returns `None` when
/// nothing extractable is present, in which case the caller assigns
/// `Verdict::Unjudgeable`.
pub fn extract_final_answer(text: &str, mode: JudgeMode) -> Option<String> {
    match mode {
        JudgeMode::ExactNormalized => text
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .map(str::to_string),
        JudgeMode::BoxedMath => extract_boxed(text).or_else(|| {
            NUMERIC_TOKEN
                .find_iter(text)
                .last()
                .map(|m| m.as_str().to_string())
        }),
    }
}

/// Judge a candidate against the gold answer. Never errors: unparseable
/// candidates simply compare unequal.
pub fn judge_answer(candidate: &str, gold: &str, mode: JudgeMode) -> bool {
    let extracted = match mode {
        JudgeMode::ExactNormalized => Some(candidate.to_string()),
        JudgeMode::BoxedMath => extract_final_answer(candidate, JudgeMode::BoxedMath),
    };
    match extracted {
        Some(ans) => normalize_answer(&ans) == normalize_answer(gold),
        None => false,
    }
}

/// Split raw text into steps. Empty segments are dropped and indices are
/// assigned 1..n in order.
pub fn split_steps(text: &str, policy: &DelimiterPolicy) -> Result<Vec<Step>, ModelError> {
    let segments: Vec<&str> = match policy {
        DelimiterPolicy::BlankLine => text.split("\n\n").collect(),
        DelimiterPolicy::ExplicitMarkers(markers) => {
            let mut parts = vec![text];
            for m in markers {
                if m.is_empty() {
                    continue;
                }
                parts = parts.into_iter().flat_map(|p| p.split(m.as_str())).collect();
            }
            parts
        }
    };
    let steps: Vec<Step> = segments
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .enumerate()
        .map(|(i, s)| Step { index: i as u32 + 1, text: s.to_string() })
        .collect();
    if steps.is_empty() {
        return Err(ModelError::EmptyResponse);
    }
    Ok(steps)
}

/// Join step texts with the blank-line delimiter.
pub fn join_steps(steps: &[Step]) -> String {
    steps.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn judge_boxed_exact_match() {
        assert!(judge_answer("The answer is \\boxed{140}", "140", JudgeMode::BoxedMath));
        assert!(!judge_answer("\\boxed{141}", "140", JudgeMode::BoxedMath));
    }

    #[test]
    fn judge_reduces_fractions() {
        // Oracle: gcd(3,6)=3 so 3/6 reduces to 1/2 independently of the
        // normalization path under test.
        let (p, q) = (3i128, 6i128);
        let g = {
            let (mut a, mut b) = (p, q);
            while b != 0 {
                (a, b) = (b, a % b);
            }
            a
        };
        assert_eq!((p / g, q / g), (1, 2));
        assert!(judge_answer("\\boxed{3/6}", "1/2", JudgeMode::BoxedMath));
        assert!(judge_answer("4/2", "2", JudgeMode::ExactNormalized));
        assert!(judge_answer("-3/6", "1/-2", JudgeMode::ExactNormalized));
    }

    #[test]
    fn judge_normalizes_numbers() {
        assert!(judge_answer(" 1,234 ", "1234", JudgeMode::ExactNormalized));
        assert!(judge_answer("2.50", "2.5", JudgeMode::ExactNormalized));
        assert!(judge_answer("2.0", "2", JudgeMode::ExactNormalized));
        assert!(judge_answer("007", "7", JudgeMode::ExactNormalized));
        assert!(!judge_answer("2.5", "2.55", JudgeMode::ExactNormalized));
    }

    #[test]
    fn judge_falls_back_to_last_numeric_token() {
        assert!(judge_answer("steps... so we get 12 then 140", "140", JudgeMode::BoxedMath));
        assert!(!judge_answer("no numbers here", "140", JudgeMode::BoxedMath));
    }

    #[test]
    fn boxed_extraction_handles_nested_braces() {
        assert_eq!(
            extract_boxed("\\boxed{\\frac{1}{2}}").as_deref(),
            Some("\\frac{1}{2}")
        );
    }

    #[test]
    fn split_blank_line_basic() {
        let steps = split_steps("A\n\nB\n\nC", &DelimiterPolicy::BlankLine).unwrap();
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[0], Step { index: 1, text: "A".into() });
        assert_eq!(steps[2], Step { index: 3, text: "C".into() });
    }

    #[test]
    fn split_single_segment_is_identity() {
        let steps = split_steps("A", &DelimiterPolicy::BlankLine).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].text, "A");
    }

    #[test]
    fn split_drops_empty_segments() {
        let steps = split_steps("A\n\n\n\nB", &DelimiterPolicy::BlankLine).unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[1].text, "B");
    }

    #[test]
    fn split_rejects_all_whitespace() {
        assert!(matches!(
            split_steps(" \n\n \n\n", &DelimiterPolicy::BlankLine),
            Err(ModelError::EmptyResponse)
        ));
    }

    #[test]
    fn split_on_explicit_markers() {
        let policy = DelimiterPolicy::ExplicitMarkers(vec!["###".into()]);
        let steps = split_steps("first###second###third", &policy).unwrap();
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[1].text, "second");
    }

    #[test]
    fn error_location_orders_no_error_last() {
        assert!(ErrorLocation::AtStep(99) < ErrorLocation::NoError);
        assert!(ErrorLocation::AtStep(2) < ErrorLocation::AtStep(3));
        assert_eq!(ErrorLocation::NoError, ErrorLocation::NoError);
    }

    #[test]
    fn error_location_serializes_as_nullable_int() {
        assert_eq!(serde_json::to_string(&ErrorLocation::AtStep(4)).unwrap(), "4");
        assert_eq!(serde_json::to_string(&ErrorLocation::NoError).unwrap(), "null");
        let back: ErrorLocation = serde_json::from_str("null").unwrap();
        assert_eq!(back, ErrorLocation::NoError);
    }

    #[test]
    fn response_from_text_judges_and_is_idempotent() {
        let q = Question::new("q1", "what is 2+2", "4");
        let make = || {
            Response::from_text(
                &q,
                "compute\n\nthe sum\n\n4",
                "gen",
                SamplingParams::default(),
                JudgeMode::ExactNormalized,
                &DelimiterPolicy::BlankLine,
            )
            .unwrap()
        };
        let r1 = make();
        let r2 = make();
        assert_eq!(r1.verdict, Verdict::Correct);
        assert_eq!(r1, r2);
        assert_eq!(r1.final_answer.as_deref(), Some("4"));
    }

    #[test]
    fn unjudgeable_when_no_answer_extractable() {
        let q = Question::new("q1", "?", "4");
        let r = Response::from_text(
            &q,
            "reasoning only",
            "gen",
            SamplingParams::default(),
            JudgeMode::BoxedMath,
            &DelimiterPolicy::BlankLine,
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Unjudgeable);
    }

    proptest! {
        // split ∘ join is the identity on already-segmented texts.
        #[test]
        fn split_join_roundtrip(texts in proptest::collection::vec("[a-z][a-z ]{0,12}", 1..8)) {
            let steps: Vec<Step> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| Step { index: i as u32 + 1, text: t.trim().to_string() })
                .filter(|s| !s.text.is_empty())
                .collect();
            prop_assume!(!steps.is_empty());
            let joined = join_steps(&steps);
            let again = split_steps(&joined, &DelimiterPolicy::BlankLine).unwrap();
            prop_assert_eq!(
                again.iter().map(|s| s.text.clone()).collect::<Vec<_>>(),
                steps.iter().map(|s| s.text.clone()).collect::<Vec<_>>()
            );
        }

        // Verdicts are a pure function of (final answer, gold).
        #[test]
        fn judging_is_deterministic(ans in "[0-9]{1,4}", gold in "[0-9]{1,4}") {
            let a = judge_answer(&ans, &gold, JudgeMode::ExactNormalized);
            let b = judge_answer(&ans, &gold, JudgeMode::ExactNormalized);
            prop_assert_eq!(a, b);
        }
    }
}
