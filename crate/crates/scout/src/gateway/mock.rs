use std::sync::Mutex;

use serde::Deserialize;

use super::{Backend, BackendError, BackendResponse, ChatRequest, ModuleTag, TokenUsage};
use crate::domain::ImageId;

/// One scripted response. Rules are checked in order; the first rule whose
/// constraints all hold (and that has uses left) answers the request.
#[derive(Debug, Clone, Deserialize)]
pub struct MockRule {
    /// Only answer calls from this module.
    #[serde(default)]
    pub module: Option<ModuleTag>,
    /// Only answer requests carrying this response schema id.
    #[serde(default)]
    pub schema: Option<String>,
    /// Only answer requests whose prompt text contains this fragment.
    #[serde(default)]
    pub contains: Option<String>,
    /// The response body.
    #[serde(default)]
    pub text: String,
    /// Endpoint-reported (input, output) token counts; omit to exercise the
    /// gateway's local estimation.
    #[serde(default)]
    pub usage: Option<(u64, u64)>,
    /// How many times this rule may fire; omit for unlimited.
    #[serde(default)]
    pub count: Option<u32>,
    /// Fail with a transport error instead of answering.
    #[serde(default)]
    pub transport_error: bool,
}

impl MockRule {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            module: None,
            schema: None,
            contains: None,
            text: text.into(),
            usage: None,
            count: None,
            transport_error: false,
        }
    }

    pub fn transport_error() -> Self {
        let mut rule = Self::reply("");
        rule.transport_error = true;
        rule
    }

    pub fn for_module(mut self, module: ModuleTag) -> Self {
        self.module = Some(module);
        self
    }

    pub fn for_schema(mut self, schema_id: impl Into<String>) -> Self {
        self.schema = Some(schema_id.into());
        self
    }

    pub fn when_contains(mut self, fragment: impl Into<String>) -> Self {
        self.contains = Some(fragment.into());
        self
    }

    pub fn usage(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        self.usage = Some((input_tokens, output_tokens));
        self
    }

    pub fn times(mut self, count: u32) -> Self {
        self.count = Some(count);
        self
    }

    fn matches(&self, module: ModuleTag, request: &ChatRequest, joined: &str) -> bool {
        if let Some(m) = self.module {
            if m != module {
                return false;
            }
        }
        if let Some(schema) = &self.schema {
            if request.schema.as_ref().map(|s| s.id) != Some(schema.as_str()) {
                return false;
            }
        }
        if let Some(fragment) = &self.contains {
            if !joined.contains(fragment.as_str()) {
                return false;
            }
        }
        true
    }
}

/// What the mock saw for one call, for structural assertions in tests: which
/// module called, with which schema, how many images, and the prompt text.
#[derive(Debug, Clone)]
pub struct SpyEntry {
    pub module: ModuleTag,
    pub model: String,
    pub schema_id: Option<String>,
    pub image_ids: Vec<ImageId>,
    pub text: String,
    pub temperature: f64,
}

impl SpyEntry {
    pub fn image_count(&self) -> usize {
        self.image_ids.len()
    }
}

struct RuleState {
    rule: MockRule,
    remaining: Option<u32>,
}

/// A scripted chat backend. Deterministic, offline, thread-safe; also records
/// every request it sees so tests can assert on prompt structure.
pub struct MockBackend {
    rules: Mutex<Vec<RuleState>>,
    spy: Mutex<Vec<SpyEntry>>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        let rules = rules
            .into_iter()
            .map(|rule| RuleState { remaining: rule.count, rule })
            .collect();
        Self { rules: Mutex::new(rules), spy: Mutex::new(Vec::new()) }
    }

    /// Loads a rule list from a JSON array.
    pub fn from_script_json(text: &str) -> Result<Self, serde_json::Error> {
        let rules: Vec<MockRule> = serde_json::from_str(text)?;
        Ok(Self::new(rules))
    }

    /// Everything this backend has been asked so far, in call order.
    pub fn spy(&self) -> Vec<SpyEntry> {
        self.spy.lock().unwrap().clone()
    }

    pub fn calls_for(&self, module: ModuleTag) -> Vec<SpyEntry> {
        self.spy().into_iter().filter(|e| e.module == module).collect()
    }
}

impl Backend for MockBackend {
    fn chat(
        &self,
        model: &str,
        module: ModuleTag,
        request: &ChatRequest,
    ) -> Result<BackendResponse, BackendError> {
        let joined = request.joined_text();
        self.spy.lock().unwrap().push(SpyEntry {
            module,
            model: model.to_string(),
            schema_id: request.schema.as_ref().map(|s| s.id.to_string()),
            image_ids: request
                .turns
                .iter()
                .flat_map(|t| t.images.iter().map(|i| i.id.clone()))
                .collect(),
            text: joined.clone(),
            temperature: request.temperature,
        });

        let mut rules = self.rules.lock().unwrap();
        for state in rules.iter_mut() {
            if state.remaining == Some(0) {
                continue;
            }
            if !state.rule.matches(module, request, &joined) {
                continue;
            }
            if let Some(n) = state.remaining.as_mut() {
                *n -= 1;
            }
            if state.rule.transport_error {
                return Err(BackendError::Transport("scripted transport failure".into()));
            }
            return Ok(BackendResponse {
                text: state.rule.text.clone(),
                usage: state
                    .rule
                    .usage
                    .map(|(input_tokens, output_tokens)| TokenUsage { input_tokens, output_tokens }),
                schema_enforced: request.schema.is_some(),
            });
        }
        let excerpt: String = joined.chars().take(120).collect();
        Err(BackendError::Script(format!(
            "no rule for module={module} schema={:?} prompt starts {excerpt:?}",
            request.schema.as_ref().map(|s| s.id),
        )))
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}
