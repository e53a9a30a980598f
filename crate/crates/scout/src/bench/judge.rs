//! Benchmark grading by majority vote. The validator inside the agent loop
//! decides when to stop trying; this judge decides, after the fact, whether
//! the final answer actually solved the task. Three independent samples are
//! drawn and the answer passes on two or more true votes. Judge spend is
//! tagged separately so it never counts toward agent cost.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::Task;
use crate::gateway::{ChatRequest, Gateway, ImagePayload, ModuleTag, SchemaRef};
use crate::validator::parse_verdict;

const SYSTEM_TEMPLATE: &str = include_str!("../../templates/judge_system.txt");

pub const JUDGE_SCHEMA_ID: &str = "judge-output";

/// How many independent samples one grading draws. Fixed: the majority rule
/// below is defined on exactly three votes.
pub const JUDGE_SAMPLES: usize = 3;

fn judge_schema() -> &'static Value {
    static SCHEMA: OnceLock<Value> = OnceLock::new();
    SCHEMA.get_or_init(|| {
        serde_json::from_str(include_str!("../../schemas/judge_output.json"))
            .expect("bundled schema is valid JSON")
    })
}

/// Two or more true votes carry the decision.
pub fn majority(votes: [bool; 3]) -> bool {
    votes.iter().filter(|v| **v).count() >= 2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    /// How many of the episode's last screenshots accompany the answer as
    /// evidence. Zero grades on the answer text alone.
    pub max_screenshots: usize,
    /// Non-zero so the three samples are genuine draws rather than one
    /// opinion repeated three times.
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            max_screenshots: crate::domain::SCREENSHOT_WINDOW,
            temperature: 0.7,
            max_output_tokens: 512,
        }
    }
}

/// One graded answer: the aggregate decision plus the individual votes, in
/// the order they were sampled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeDecision {
    pub success: bool,
    pub votes: Vec<bool>,
}

pub struct Judge {
    config: JudgeConfig,
}

impl Judge {
    pub fn new(config: JudgeConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.config
    }

    /// Grades one final answer by majority over three independent samples.
    ///
    /// Fail-closed: a sample whose output cannot be parsed, or whose request
    /// fails outright, counts as a false vote. The evidence screenshots are
    /// truncated to the configured cap, keeping the most recent ones.
    pub fn grade(
        &self,
        gateway: &Gateway,
        task: &Task,
        answer: &str,
        reference_hint: Option<&str>,
        evidence: &[ImagePayload],
    ) -> JudgeDecision {
        let keep = evidence.len().saturating_sub(self.config.max_screenshots);
        let images: Vec<ImagePayload> = evidence[keep..].to_vec();

        let mut user_text = format!(
            "Task: {}\n\nFinal answer: {answer}",
            task.instruction
        );
        if let Some(hint) = reference_hint {
            user_text.push_str(&format!("\n\nReference answer (hint): {hint}"));
        }
        user_text.push_str("\n\nDid the answer complete the task?");

        let request = ChatRequest::new()
            .system(SYSTEM_TEMPLATE)
            .user(user_text, images)
            .schema(SchemaRef { id: JUDGE_SCHEMA_ID, schema: judge_schema().clone() })
            .temperature(self.config.temperature)
            .max_output_tokens(self.config.max_output_tokens);

        let mut votes = [false; 3];
        for vote in votes.iter_mut() {
            *vote = match gateway.call(ModuleTag::Judge, &request) {
                Ok(response) => match parse_verdict(&response.text) {
                    Ok(verdict) => verdict.success,
                    Err(e) => {
                        log::warn!("judge sample unparseable, counted false: {e}");
                        false
                    }
                },
                Err(e) => {
                    log::warn!("judge sample failed, counted false: {e}");
                    false
                }
            };
        }
        JudgeDecision { success: majority(votes), votes: votes.to_vec() }
    }
}
