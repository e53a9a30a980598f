use serde::{Deserialize, Serialize};

use super::{DomainError, Step, Task};

/// One validated answer attempt: the steps taken, the answer produced, and
/// the verdict that was passed on it. `verdict` is absent when the episode
/// was cut off before validation ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub steps: Vec<Step>,
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictRecord>,
}

/// The validator's decision as persisted in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub success: bool,
    pub explanation: String,
}

/// A full episode as written to disk: everything needed to replay or audit
/// the run. Screenshots are referenced by content hash; the bytes live in a
/// sibling image store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub task: Task,
    pub attempts: Vec<AttemptRecord>,
    pub final_answer: Option<String>,
    /// `Some(true)` when an answer was accepted, `Some(false)` when every
    /// attempt was rejected or the budget ran out, `None` when the episode
    /// ended without any validation (e.g. a hard environment failure).
    pub success: Option<bool>,
    /// Total model spend attributed to the episode's agent calls, in USD.
    pub cost_usd: f64,
}

impl EpisodeTrace {
    /// Structural checks beyond what serde enforces: step indices within each
    /// attempt must be 0,1,2,... and an accepted episode must carry its
    /// answer.
    pub fn validate(&self) -> Result<(), DomainError> {
        for (a, attempt) in self.attempts.iter().enumerate() {
            for (i, step) in attempt.steps.iter().enumerate() {
                if step.index as usize != i {
                    return Err(DomainError::Contract(format!(
                        "attempt {a} step {i} carries index {}",
                        step.index
                    )));
                }
            }
        }
        if self.success == Some(true) && self.final_answer.is_none() {
            return Err(DomainError::Contract(
                "successful episode without a final answer".into(),
            ));
        }
        if !(self.cost_usd.is_finite() && self.cost_usd >= 0.0) {
            return Err(DomainError::Contract(format!("invalid cost {}", self.cost_usd)));
        }
        Ok(())
    }
}

/// Renders one episode as a single JSON line (no trailing newline).
pub fn serialize_trace(trace: &EpisodeTrace) -> Result<String, DomainError> {
    trace.validate()?;
    serde_json::to_string(trace)
        .map_err(|e| DomainError::Invalid { what: "trace", why: e.to_string() })
}

/// Parses one episode from a JSON document.
pub fn parse_trace(text: &str) -> Result<EpisodeTrace, DomainError> {
    let trace: EpisodeTrace = serde_json::from_str(text).map_err(|e| DomainError::TraceParse {
        offset: 0,
        message: e.to_string(),
    })?;
    trace.validate().map_err(|e| DomainError::TraceParse { offset: 0, message: e.to_string() })?;
    Ok(trace)
}

/// Parses a JSONL stream of episodes. Blank lines are skipped; on failure the
/// error names the byte offset of the offending line.
pub fn parse_traces(text: &str) -> Result<Vec<EpisodeTrace>, DomainError> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let trace = parse_trace(trimmed).map_err(|e| match e {
                DomainError::TraceParse { message, .. } => {
                    DomainError::TraceParse { offset, message }
                }
                other => other,
            })?;
            out.push(trace);
        }
        offset += line.len();
    }
    Ok(out)
}
