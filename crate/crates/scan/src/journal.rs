//! Append-only JSONL journal for crash-safe synthesis runs.
//!
//! One record per completed unit of work: a `Generated` record for each
//! (provider, question) generation batch and a `StepScored` record for each
//! annotated step. Records are flushed line-by-line so an interrupted run
//! loses at most the line being written; replay tolerates a torn final
//! line.

use crate::provider::Completion;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt journal record: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalRecord {
    /// All completions generated for one (provider, question) unit, plus
    /// the self-confidence counts derived from the same pool.
    Generated {
        provider: String,
        question_id: String,
        completions: Vec<Completion>,
        sc_correct: u32,
        sc_n: u32,
    },
    /// One scored step of one response.
    StepScored {
        provider: String,
        question_id: String,
        response_idx: u32,
        step: u32,
        correct: u32,
        k: u32,
        unjudgeable: u32,
    },
}

/// Replayed per-response annotation progress: contiguous step counts.
#[derive(Debug, Default, Clone)]
pub struct AnnotationProgress {
    pub counts: Vec<u32>,
    pub unjudgeable: u32,
}

/// Journal state rebuilt from disk before issuing new work.
#[derive(Debug, Default)]
pub struct ReplayState {
    pub generated: BTreeMap<(String, String), (Vec<Completion>, u32, u32)>,
    pub annotation: BTreeMap<(String, String, u32), AnnotationProgress>,
}

impl ReplayState {
    pub fn generation(&self, provider: &str, question_id: &str) -> Option<&(Vec<Completion>, u32, u32)> {
        self.generated.get(&(provider.to_string(), question_id.to_string()))
    }

    pub fn progress(&self, provider: &str, question_id: &str, response_idx: u32) -> &[u32] {
        self.annotation
            .get(&(provider.to_string(), question_id.to_string(), response_idx))
            .map(|p| p.counts.as_slice())
            .unwrap_or(&[])
    }
}

pub struct Journal {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl Journal {
    /// Open (or create) a journal for appending.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, JournalError> {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, writer: Mutex::new(BufWriter::new(file)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record and flush it to the OS before returning.
    pub fn append(&self, record: &JournalRecord) -> Result<(), JournalError> {
        let line = serde_json::to_string(record)
            .map_err(|e| JournalError::Corrupt(e.to_string()))?;
        let mut w = self.writer.lock().unwrap();
        writeln!(w, "{line}")?;
        w.flush()?;
        Ok(())
    }

    /// Read every intact record from a journal file. A torn final line
    /// (crash mid-write) is skipped; corruption anywhere else is an error.
    pub fn read_records(path: &Path) -> Result<Vec<JournalRecord>, JournalError> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(File::open(path)?);
        let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        let mut records = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<JournalRecord>(line) {
                Ok(r) => records.push(r),
                Err(e) if i + 1 == lines.len() => {
                    // Torn tail from an interrupted write; resume re-does
                    // that unit.
                    let _ = e;
                }
                Err(e) => return Err(JournalError::Corrupt(format!("line {}: {e}", i + 1))),
            }
        }
        Ok(records)
    }

    /// Rebuild resumable state from a journal file.
    pub fn replay(path: &Path) -> Result<ReplayState, JournalError> {
        let mut state = ReplayState::default();
        for record in Self::read_records(path)? {
            match record {
                JournalRecord::Generated { provider, question_id, completions, sc_correct, sc_n } => {
                    state
                        .generated
                        .insert((provider, question_id), (completions, sc_correct, sc_n));
                }
                JournalRecord::StepScored {
                    provider,
                    question_id,
                    response_idx,
                    step,
                    correct,
                    unjudgeable,
                    ..
                } => {
                    let entry = state
                        .annotation
                        .entry((provider, question_id, response_idx))
                        .or_default();
                    let expected = entry.counts.len() as u32 + 1;
                    if step != expected {
                        return Err(JournalError::Corrupt(format!(
                            "step {step} recorded out of order (expected {expected})"
                        )));
                    }
                    entry.counts.push(correct);
                    entry.unjudgeable += unjudgeable;
                }
            }
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::FinishReason;

    fn gen_record(q: &str) -> JournalRecord {
        JournalRecord::Generated {
            provider: "sim".into(),
            question_id: q.into(),
            completions: vec![Completion { text: "a\n\n1".into(), finish_reason: FinishReason::Stop }],
            sc_correct: 1,
            sc_n: 1,
        }
    }

    fn step_record(q: &str, idx: u32, step: u32, correct: u32) -> JournalRecord {
        JournalRecord::StepScored {
            provider: "sim".into(),
            question_id: q.into(),
            response_idx: idx,
            step,
            correct,
            k: 8,
            unjudgeable: 0,
        }
    }

    #[test]
    fn append_and_replay_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let journal = Journal::open(&path).unwrap();
            journal.append(&gen_record("q1")).unwrap();
            journal.append(&step_record("q1", 0, 1, 5)).unwrap();
            journal.append(&step_record("q1", 0, 2, 0)).unwrap();
        }
        let state = Journal::replay(&path).unwrap();
        assert!(state.generation("sim", "q1").is_some());
        assert_eq!(state.progress("sim", "q1", 0), &[5, 0]);
        assert_eq!(state.progress("sim", "q1", 1), &[] as &[u32]);
    }

    #[test]
    fn torn_final_line_is_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let journal = Journal::open(&path).unwrap();
            journal.append(&gen_record("q1")).unwrap();
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"{\"type\":\"step_scored\",\"provider\":\"sim\"");
        std::fs::write(&path, bytes).unwrap();
        let state = Journal::replay(&path).unwrap();
        assert!(state.generation("sim", "q1").is_some());
        assert!(state.annotation.is_empty());
    }

    #[test]
    fn interior_corruption_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        std::fs::write(&path, "not json\n{\"also\":\"not a record\"}\n").unwrap();
        assert!(Journal::replay(&path).is_err());
    }

    #[test]
    fn out_of_order_steps_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let journal = Journal::open(&path).unwrap();
            journal.append(&step_record("q1", 0, 2, 3)).unwrap();
        }
        assert!(matches!(Journal::replay(&path), Err(JournalError::Corrupt(_))));
    }

    #[test]
    fn reopening_appends_rather_than_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let journal = Journal::open(&path).unwrap();
            journal.append(&gen_record("q1")).unwrap();
        }
        {
            let journal = Journal::open(&path).unwrap();
            journal.append(&gen_record("q2")).unwrap();
        }
        let records = Journal::read_records(&path).unwrap();
        assert_eq!(records.len(), 2);
    }
}
