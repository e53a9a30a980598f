//! The validator: the sole gate on proposed answers. Judges (task, answer,
//! recent screenshots) and either accepts the episode or produces feedback
//! for the next attempt. Every failure mode rejects; nothing that goes wrong
//! here can terminate an episode successfully.

use std::sync::OnceLock;

use serde_json::Value;

use crate::domain::{AgentMemory, DomainError, ImageId, Task, VerdictRecord};
use crate::gateway::{ChatRequest, Gateway, ImagePayload, ModuleTag, SchemaRef};

const SYSTEM_TEMPLATE: &str = include_str!("../templates/validator_system.txt");

pub const VALIDATOR_SCHEMA_ID: &str = "validator-output";

fn verdict_schema() -> &'static Value {
    static SCHEMA: OnceLock<Value> = OnceLock::new();
    SCHEMA.get_or_init(|| {
        serde_json::from_str(include_str!("../schemas/validator_output.json"))
            .expect("bundled schema is valid JSON")
    })
}

/// The validator's decision on one answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub success: bool,
    pub explanation: String,
}

impl Verdict {
    pub fn new(success: bool, explanation: impl Into<String>) -> Result<Self, DomainError> {
        let explanation = explanation.into();
        if explanation.trim().is_empty() {
            return Err(DomainError::Invalid {
                what: "verdict",
                why: "empty explanation".into(),
            });
        }
        Ok(Self { success, explanation })
    }

    pub fn to_record(&self) -> VerdictRecord {
        VerdictRecord { success: self.success, explanation: self.explanation.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct ValidatorConfig {
    pub max_parse_retries: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Explanations are truncated to this many characters before they enter
    /// the notepad, keeping later prompts bounded.
    pub max_explanation_chars: usize,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            max_parse_retries: 3,
            temperature: 0.0,
            max_output_tokens: 512,
            max_explanation_chars: 600,
        }
    }
}

/// Parses `{"success":bool,"explanation":"..."}`, tolerating a fenced block.
pub fn parse_verdict(text: &str) -> Result<Verdict, String> {
    let value = crate::util::extract_json(text)?;
    let obj = value.as_object().ok_or("verdict is not a JSON object")?;
    let success = obj
        .get("success")
        .and_then(Value::as_bool)
        .ok_or("missing boolean field \"success\"")?;
    let explanation = obj
        .get("explanation")
        .and_then(Value::as_str)
        .ok_or("missing string field \"explanation\"")?;
    Verdict::new(success, explanation).map_err(|e| e.to_string())
}

/// Formats a rejection as a notepad note. Calling this on an accepted verdict
/// is a contract violation.
pub fn feedback_note(verdict: &Verdict, attempt_index: u32) -> Result<String, DomainError> {
    if verdict.success {
        return Err(DomainError::Contract(
            "feedback_note called on an accepted verdict".into(),
        ));
    }
    Ok(format!("validator rejected attempt {attempt_index}: {}", verdict.explanation))
}

pub struct Validator {
    config: ValidatorConfig,
}

impl Validator {
    pub fn new(config: ValidatorConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &ValidatorConfig {
        &self.config
    }

    /// Judges one answer against the screenshots of the answering step's
    /// window. Fail-closed: unparseable output after retries, and any model
    /// or transport failure, come back as rejections. The only hard error is
    /// a contract violation (more than 3 screenshots, or ids missing from the
    /// episode store).
    pub fn validate(
        &self,
        gateway: &Gateway,
        task: &Task,
        answer: &str,
        window: &[ImageId],
        memory: &AgentMemory,
    ) -> Result<Verdict, DomainError> {
        if window.len() > crate::domain::SCREENSHOT_WINDOW {
            return Err(DomainError::Contract(format!(
                "validator given {} screenshots, window law caps it at {}",
                window.len(),
                crate::domain::SCREENSHOT_WINDOW
            )));
        }
        let images: Vec<ImagePayload> = memory
            .resolve_images(window)?
            .into_iter()
            .zip(window.iter())
            .map(|(data, id)| ImagePayload::new(id.clone(), data))
            .collect();
        let user_text = format!(
            "Task: {}\n\nProposed answer: {answer}\n\nJudge the answer against the screenshots.",
            task.instruction
        );
        let request = ChatRequest::new()
            .system(SYSTEM_TEMPLATE)
            .user(user_text, images)
            .schema(SchemaRef { id: VALIDATOR_SCHEMA_ID, schema: verdict_schema().clone() })
            .temperature(self.config.temperature)
            .max_output_tokens(self.config.max_output_tokens);

        let attempts = 1 + self.config.max_parse_retries;
        for _ in 0..attempts {
            match gateway.call(ModuleTag::Validator, &request) {
                Ok(response) => match parse_verdict(&response.text) {
                    Ok(verdict) => return Ok(self.cap(verdict)),
                    Err(e) => log::warn!("validator output unparseable: {e}"),
                },
                Err(e) => {
                    log::warn!("validator call failed: {e}");
                    return Ok(Verdict {
                        success: false,
                        explanation: format!("validator call failed: {e}"),
                    });
                }
            }
        }
        Ok(Verdict { success: false, explanation: "validator output unparseable".into() })
    }

    fn cap(&self, mut verdict: Verdict) -> Verdict {
        if verdict.explanation.chars().count() > self.config.max_explanation_chars {
            verdict.explanation = verdict
                .explanation
                .chars()
                .take(self.config.max_explanation_chars)
                .collect();
        }
        verdict
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ImageData;
    use crate::gateway::{MockBackend, MockRule, PricingTable};
    use std::sync::Arc;

    fn png(seed: u8) -> ImageData {
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([seed, 9, 9]));
        let mut out = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
        ImageData::from_png(out).unwrap()
    }

    fn memory() -> AgentMemory {
        let task = Task::new("t", "sim://p1", "find the price").unwrap();
        AgentMemory::new(task, png(0)).unwrap()
    }

    fn gateway(rules: Vec<MockRule>) -> Gateway {
        let mut g = Gateway::new(PricingTable::default());
        g.bind(ModuleTag::Validator, "gpt-4o", Arc::new(MockBackend::new(rules)));
        g
    }

    fn run(rules: Vec<MockRule>) -> Verdict {
        let g = gateway(rules);
        let m = memory();
        let window = vec![m.current_screenshot_id().clone()];
        Validator::new(ValidatorConfig::default())
            .validate(&g, m.task(), "$4", &window, &m)
            .unwrap()
    }

    #[test]
    fn accepts_and_rejects_per_the_script() {
        let v = run(vec![MockRule::reply(r#"{"success":true,"explanation":"answer matches page"}"#)]);
        assert!(v.success);
        assert_eq!(v.explanation, "answer matches page");

        let v = run(vec![MockRule::reply(r#"{"success":false,"explanation":"price not visible"}"#)]);
        assert!(!v.success);
        assert_eq!(v.explanation, "price not visible");
    }

    #[test]
    fn prose_fails_closed_after_retries() {
        let v = run(vec![MockRule::reply("looks good to me!")]);
        assert!(!v.success);
        assert_eq!(v.explanation, "validator output unparseable");
    }

    #[test]
    fn gateway_failure_fails_closed() {
        let v = run(vec![MockRule::transport_error()]);
        assert!(!v.success);
        assert!(v.explanation.contains("validator call failed"));
    }

    #[test]
    fn parse_recovers_within_the_retry_budget() {
        let v = run(vec![
            MockRule::reply("hmm").times(2),
            MockRule::reply(r#"{"success":true,"explanation":"ok"}"#),
        ]);
        assert!(v.success);
    }

    #[test]
    fn window_cap_is_a_contract_error() {
        let g = gateway(vec![MockRule::reply(r#"{"success":true,"explanation":"ok"}"#)]);
        let m = memory();
        let id = m.current_screenshot_id().clone();
        let window = vec![id.clone(), id.clone(), id.clone(), id];
        let result = Validator::new(ValidatorConfig::default())
            .validate(&g, m.task(), "x", &window, &m);
        assert!(matches!(result, Err(DomainError::Contract(_))));
    }

    #[test]
    fn long_explanations_are_capped() {
        let long = "x".repeat(2000);
        let v = run(vec![MockRule::reply(format!(
            r#"{{"success":false,"explanation":"{long}"}}"#
        ))]);
        assert_eq!(v.explanation.chars().count(), 600);
    }

    #[test]
    fn feedback_note_formats_and_guards() {
        let reject = Verdict::new(false, "price not visible").unwrap();
        assert_eq!(
            feedback_note(&reject, 1).unwrap(),
            "validator rejected attempt 1: price not visible"
        );
        let accept = Verdict::new(true, "fine").unwrap();
        assert!(feedback_note(&accept, 1).is_err());
    }

    #[test]
    fn empty_explanation_is_invalid() {
        assert!(Verdict::new(true, "  ").is_err());
        assert!(parse_verdict(r#"{"success":true,"explanation":""}"#).is_err());
    }
}
