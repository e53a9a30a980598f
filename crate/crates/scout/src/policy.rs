//! The policy: proposes the next action from the task, the step history, the
//! notepad, and the recent screenshot window.

use std::sync::OnceLock;

use serde_json::Value;

use crate::domain::{Action, AgentMemory, DomainError, ImageId, NoteOrigin, Task};
use crate::gateway::{ChatRequest, Gateway, GatewayError, ImagePayload, ModuleTag, SchemaRef};

const SYSTEM_TEMPLATE: &str = include_str!("../templates/policy_system.txt");
const USER_TEMPLATE: &str = include_str!("../templates/policy_user.txt");
const FORCED_SUFFIX: &str = include_str!("../templates/policy_forced.txt");

pub const POLICY_SCHEMA_ID: &str = "policy-output";
pub const POLICY_FORCED_SCHEMA_ID: &str = "policy-output-forced";

fn policy_schema() -> &'static Value {
    static SCHEMA: OnceLock<Value> = OnceLock::new();
    SCHEMA.get_or_init(|| {
        serde_json::from_str(include_str!("../schemas/policy_output.json"))
            .expect("bundled schema is valid JSON")
    })
}

fn forced_schema() -> &'static Value {
    static SCHEMA: OnceLock<Value> = OnceLock::new();
    SCHEMA.get_or_init(|| {
        serde_json::from_str(include_str!("../schemas/policy_output_forced.json"))
            .expect("bundled schema is valid JSON")
    })
}

#[derive(Debug, Clone)]
pub struct PolicyConfig {
    /// How many times an unparseable response is re-asked before giving up.
    pub max_parse_retries: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { max_parse_retries: 3, temperature: 0.1, max_output_tokens: 1024 }
    }
}

/// A parsed policy decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub thought: String,
    pub notes: Option<String>,
    pub action: Action,
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    /// Every parse attempt failed; carries the final raw response so callers
    /// can salvage something (e.g. a forced answer) or log it.
    #[error("policy output unparseable after {attempts} attempts: {last_error}")]
    Unparseable { attempts: u32, last_error: String, last_raw: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// The fully assembled prompt for one policy call. Keeping this a value makes
/// training-data export a pure replay: rebuild the prompt, pair it with the
/// step's recorded output.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPrompt {
    pub system: String,
    pub user_text: String,
    /// Screenshot window, oldest first; the last id is the current view.
    pub window: Vec<ImageId>,
    pub forced_answer: bool,
}

/// Renders the prompt for the step about to be taken.
pub fn build_policy_prompt(
    memory: &AgentMemory,
    forced_answer: bool,
) -> Result<PolicyPrompt, DomainError> {
    let window = memory.memory_window(memory.next_index())?;
    Ok(PolicyPrompt {
        system: SYSTEM_TEMPLATE.to_string(),
        user_text: render_user_text(memory.task(), memory, forced_answer),
        window,
        forced_answer,
    })
}

fn render_user_text(task: &Task, memory: &AgentMemory, forced_answer: bool) -> String {
    let mut text = USER_TEMPLATE
        .replace("{task}", &task.instruction)
        .replace("{history}", &render_history(memory))
        .replace("{feedback}", &render_notepad(memory));
    if forced_answer {
        text.push('\n');
        text.push_str(FORCED_SUFFIX);
    }
    text
}

fn render_history(memory: &AgentMemory) -> String {
    let steps = memory.attempt_steps();
    if steps.is_empty() {
        return "No steps taken yet in this attempt.".to_string();
    }
    let mut out = String::from("Steps so far in this attempt:\n");
    for step in steps {
        let action = serde_json::to_string(&step.action.policy_form())
            .expect("actions always serialize");
        out.push_str(&format!("step {}: thought: {}; action: {action}", step.index, step.thought));
        if let Some(notes) = &step.notes {
            out.push_str(&format!("; noted: {notes}"));
        }
        out.push('\n');
    }
    out.pop();
    out
}

fn render_notepad(memory: &AgentMemory) -> String {
    if memory.notepad().is_empty() {
        return "Notepad is empty.".to_string();
    }
    let mut out = String::from("Notepad:\n");
    for entry in memory.notepad() {
        let prefix = match entry.origin {
            NoteOrigin::Agent => "note",
            NoteOrigin::ValidatorFeedback => "validator",
        };
        out.push_str(&format!("- [{prefix}] {}\n", entry.text));
    }
    out.pop();
    out
}

/// Parses a policy response. Accepts the bare JSON object, or one wrapped in
/// a fenced code block when the endpoint ignored the response schema.
pub fn parse_policy_output(text: &str, forced_answer: bool) -> Result<PolicyOutput, String> {
    let value = crate::util::extract_json(text)?;
    let obj = value.as_object().ok_or("response is not a JSON object")?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "thought" | "notes" | "action") {
            return Err(format!("unexpected key {key:?}"));
        }
    }
    let thought = obj
        .get("thought")
        .and_then(Value::as_str)
        .ok_or("missing string field \"thought\"")?
        .to_string();
    if thought.trim().is_empty() {
        return Err("empty \"thought\"".into());
    }
    let notes = match obj.get("notes") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(format!("\"notes\" must be a string or null, got {other}")),
    };
    let action_value = obj.get("action").ok_or("missing field \"action\"")?;
    let action = Action::from_value(action_value)?;
    if let Some(target) = action.target() {
        if target.resolved.is_some() {
            return Err("policy actions must not carry resolved coordinates".into());
        }
    }
    if forced_answer && !action.is_answer() {
        return Err(format!("forced answer mode requires an answer action, got {}", action.kind()));
    }
    Ok(PolicyOutput { thought, notes, action })
}

/// Canonical JSON rendering of a decision, used as the training target when
/// exporting behavior-cloning samples.
pub fn render_policy_output(output: &PolicyOutput) -> String {
    serde_json::json!({
        "thought": output.thought,
        "notes": output.notes,
        "action": output.action.policy_form(),
    })
    .to_string()
}

pub struct Policy {
    config: PolicyConfig,
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    /// Builds the gateway request for a prepared prompt.
    pub fn to_request(
        &self,
        prompt: &PolicyPrompt,
        memory: &AgentMemory,
    ) -> Result<ChatRequest, PolicyError> {
        let images = memory
            .resolve_images(&prompt.window)?
            .into_iter()
            .zip(prompt.window.iter())
            .map(|(data, id)| ImagePayload::new(id.clone(), data))
            .collect();
        let schema = if prompt.forced_answer {
            SchemaRef { id: POLICY_FORCED_SCHEMA_ID, schema: forced_schema().clone() }
        } else {
            SchemaRef { id: POLICY_SCHEMA_ID, schema: policy_schema().clone() }
        };
        Ok(ChatRequest::new()
            .system(prompt.system.clone())
            .user(prompt.user_text.clone(), images)
            .schema(schema)
            .temperature(self.config.temperature)
            .max_output_tokens(self.config.max_output_tokens))
    }

    /// Asks the model for the next action, re-asking on unparseable output up
    /// to the configured retry limit.
    pub fn propose(
        &self,
        gateway: &Gateway,
        memory: &AgentMemory,
        forced_answer: bool,
    ) -> Result<PolicyOutput, PolicyError> {
        let prompt = build_policy_prompt(memory, forced_answer)?;
        let request = self.to_request(&prompt, memory)?;
        let attempts = 1 + self.config.max_parse_retries;
        let mut last_raw = String::new();
        let mut last_error = String::new();
        for attempt in 0..attempts {
            let response = gateway.call(ModuleTag::Policy, &request)?;
            match parse_policy_output(&response.text, forced_answer) {
                Ok(output) => return Ok(output),
                Err(e) => {
                    log::warn!("policy output attempt {attempt} unparseable: {e}");
                    last_raw = response.text;
                    last_error = e;
                }
            }
        }
        Err(PolicyError::Unparseable { attempts, last_error, last_raw })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ImageData, Step};
    use crate::gateway::{MockBackend, MockRule, PricingTable};
    use std::sync::Arc;

    fn png(seed: u8) -> ImageData {
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([seed, 0, 0]));
        let mut out = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
        ImageData::from_png(out).unwrap()
    }

    fn memory_with_steps(n: u32) -> AgentMemory {
        let task = Task::new("t", "sim://home", "buy the red mug").unwrap();
        let mut m = AgentMemory::new(task, png(0)).unwrap();
        for i in 0..n {
            let step = Step::new(
                i,
                format!("thought {i}"),
                if i == 0 { Some("mug costs $4".into()) } else { None },
                Action::Scroll { direction: crate::domain::ScrollDirection::Down },
                m.current_screenshot_id().clone(),
            )
            .unwrap();
            m = m.append_step(step).unwrap();
            m = m.with_observation(png((i + 1) as u8));
        }
        m
    }

    fn gateway(rules: Vec<MockRule>) -> (Gateway, Arc<MockBackend>) {
        let backend = Arc::new(MockBackend::new(rules));
        let mut g = Gateway::new(PricingTable::default());
        g.bind(ModuleTag::Policy, "gpt-4o", Arc::clone(&backend) as Arc<dyn crate::gateway::Backend>);
        (g, backend)
    }

    const CLICK_JSON: &str =
        r#"{"thought": "the mug link is visible", "notes": null, "action": {"kind": "click", "target": "red mug product link"}}"#;

    #[test]
    fn prompt_substitutes_task_history_and_feedback() {
        let m = memory_with_steps(2).with_feedback("validator rejected attempt 1: wrong color");
        let prompt = build_policy_prompt(&m, false).unwrap();
        assert!(prompt.user_text.contains("buy the red mug"));
        assert!(prompt.user_text.contains("step 0: thought: thought 0"));
        assert!(prompt.user_text.contains("[note] mug costs $4"));
        assert!(prompt.user_text.contains("[validator] validator rejected attempt 1"));
        assert!(!prompt.user_text.contains("{task}"));
        assert!(!prompt.user_text.contains("{history}"));
        assert!(!prompt.user_text.contains("{feedback}"));
    }

    #[test]
    fn prompt_window_tracks_step_count() {
        for (steps, expected) in [(0u32, 1usize), (1, 2), (2, 3), (7, 3)] {
            let m = memory_with_steps(steps);
            let prompt = build_policy_prompt(&m, false).unwrap();
            assert_eq!(prompt.window.len(), expected, "at {steps} steps");
            assert_eq!(prompt.window.last().unwrap(), m.current_screenshot_id());
        }
    }

    #[test]
    fn forced_prompt_adds_the_directive_and_schema() {
        let m = memory_with_steps(1);
        let prompt = build_policy_prompt(&m, true).unwrap();
        assert!(prompt.user_text.contains("You must answer now"));
        let policy = Policy::new(PolicyConfig::default());
        let req = policy.to_request(&prompt, &m).unwrap();
        assert_eq!(req.schema.unwrap().id, POLICY_FORCED_SCHEMA_ID);
    }

    #[test]
    fn parses_clean_and_fenced_output() {
        let parsed = parse_policy_output(CLICK_JSON, false).unwrap();
        assert_eq!(parsed.action.kind(), "click");
        assert_eq!(parsed.notes, None);

        let fenced = format!("Here is my decision:\n```json\n{CLICK_JSON}\n```");
        let parsed = parse_policy_output(&fenced, false).unwrap();
        assert_eq!(parsed.thought, "the mug link is visible");
    }

    #[test]
    fn rejects_garbage_extra_keys_and_coordinates() {
        assert!(parse_policy_output("the action is click", false).is_err());
        assert!(parse_policy_output(
            r#"{"thought": "x", "action": {"kind": "wait"}, "confidence": 0.9}"#,
            false
        )
        .is_err());
        assert!(parse_policy_output(
            r#"{"thought": "x", "action": {"kind": "click", "target": {"description": "d", "resolved": [3, 4]}}}"#,
            false
        )
        .is_err());
    }

    #[test]
    fn forced_mode_rejects_non_answer_actions() {
        assert!(parse_policy_output(CLICK_JSON, true).is_err());
        let answer =
            r#"{"thought": "done", "notes": null, "action": {"kind": "answer", "text": "$4"}}"#;
        assert!(parse_policy_output(answer, true).unwrap().action.is_answer());
    }

    #[test]
    fn propose_retries_unparseable_output() {
        let (g, backend) = gateway(vec![
            MockRule::reply("not json at all").times(2),
            MockRule::reply(CLICK_JSON),
        ]);
        let m = memory_with_steps(1);
        let policy = Policy::new(PolicyConfig::default());
        let output = policy.propose(&g, &m, false).unwrap();
        assert_eq!(output.action.kind(), "click");
        assert_eq!(backend.spy().len(), 3);
    }

    #[test]
    fn propose_gives_up_after_the_retry_budget() {
        let (g, backend) = gateway(vec![MockRule::reply("nope")]);
        let m = memory_with_steps(0);
        let policy = Policy::new(PolicyConfig::default());
        match policy.propose(&g, &m, false) {
            Err(PolicyError::Unparseable { attempts, last_raw, .. }) => {
                assert_eq!(attempts, 4);
                assert_eq!(last_raw, "nope");
            }
            other => panic!("expected Unparseable, got {other:?}"),
        }
        assert_eq!(backend.spy().len(), 4);
    }

    #[test]
    fn requests_carry_policy_temperature_and_window_images() {
        let (g, backend) = gateway(vec![MockRule::reply(CLICK_JSON)]);
        let m = memory_with_steps(5);
        Policy::new(PolicyConfig::default()).propose(&g, &m, false).unwrap();
        let spy = backend.spy();
        assert_eq!(spy[0].temperature, 0.1);
        assert_eq!(spy[0].image_count(), 3);
        assert_eq!(spy[0].schema_id.as_deref(), Some(POLICY_SCHEMA_ID));
    }

    #[test]
    fn render_pairs_with_parse() {
        let output = parse_policy_output(CLICK_JSON, false).unwrap();
        let rendered = render_policy_output(&output);
        let reparsed = parse_policy_output(&rendered, false).unwrap();
        assert_eq!(reparsed, output);
    }
}
