//! Model gateway: one place where chat requests go out, responses come back,
//! and every call is priced and logged.
//!
//! Each agent module (policy, localizer, validator, judge) is bound to a
//! model name and a [`Backend`]. Backends are interchangeable: a scripted
//! [`MockBackend`] for tests and offline runs, an HTTP chat-completions
//! client (feature `live`) for real endpoints. The gateway retries transport
//! failures, prefers endpoint-reported token usage over local estimates, and
//! keeps a [`UsageLedger`] so a run can report exactly what it spent.

mod ledger;
mod mock;
mod pricing;

#[cfg(feature = "live")]
mod http;

pub use ledger::{LedgerReport, ModuleTotals, UsageLedger};
pub use mock::{MockBackend, MockRule, SpyEntry};
pub use pricing::{
    estimate_input_tokens, estimate_output_tokens, ModelPricing, ModuleTag, PricingTable,
    TokenUsage, UsageRecord,
};

#[cfg(feature = "live")]
pub use http::HttpBackend;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::domain::{ImageData, ImageId};

/// Most images any single request may carry. The policy window tops out at
/// three screenshots; anything past four means a prompt-assembly bug.
pub const MAX_REQUEST_IMAGES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Network-level failure; the gateway retries these.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The endpoint answered with an error status.
    #[error("endpoint error {status}: {message}")]
    Endpoint { status: u16, message: String },
    /// A required credential environment variable is unset or empty.
    #[error("missing credentials: {0}")]
    MissingCredentials(String),
    /// A scripted backend had no response for the request.
    #[error("mock script exhausted: {0}")]
    Script(String),
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("no model bound for module {0}")]
    NoBinding(ModuleTag),
    #[error("model {0} is not in the pricing table")]
    UnknownModel(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    User,
    Assistant,
}

/// One image attached to a turn, carried with its dimensions so token
/// estimation never has to re-decode the PNG.
#[derive(Debug, Clone)]
pub struct ImagePayload {
    pub id: ImageId,
    pub data: Arc<ImageData>,
}

impl ImagePayload {
    pub fn new(id: ImageId, data: Arc<ImageData>) -> Self {
        Self { id, data }
    }
}

#[derive(Debug, Clone)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub images: Vec<ImagePayload>,
}

/// A JSON schema the endpoint should enforce on the response, identified by a
/// stable id so scripted backends can match on it.
#[derive(Debug, Clone)]
pub struct SchemaRef {
    pub id: &'static str,
    pub schema: serde_json::Value,
}

/// A chat request as the agent modules build it: an optional system prompt,
/// alternating turns, and sampling settings.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub turns: Vec<Turn>,
    pub schema: Option<SchemaRef>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new() -> Self {
        Self { system: None, turns: Vec::new(), schema: None, temperature: 0.0, max_output_tokens: 1024 }
    }

    pub fn system(mut self, text: impl Into<String>) -> Self {
        self.system = Some(text.into());
        self
    }

    pub fn user(mut self, text: impl Into<String>, images: Vec<ImagePayload>) -> Self {
        self.turns.push(Turn { role: Role::User, text: text.into(), images });
        self
    }

    pub fn assistant(mut self, text: impl Into<String>) -> Self {
        self.turns.push(Turn { role: Role::Assistant, text: text.into(), images: Vec::new() });
        self
    }

    pub fn schema(mut self, schema: SchemaRef) -> Self {
        self.schema = Some(schema);
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn image_count(&self) -> usize {
        self.turns.iter().map(|t| t.images.len()).sum()
    }

    /// Characters of prompt text across system and turns, for estimation.
    pub fn text_chars(&self) -> usize {
        self.system.as_deref().map(|s| s.chars().count()).unwrap_or(0)
            + self.turns.iter().map(|t| t.text.chars().count()).sum::<usize>()
    }

    pub fn image_dims(&self) -> Vec<(u32, u32)> {
        self.turns
            .iter()
            .flat_map(|t| t.images.iter().map(|i| (i.data.width, i.data.height)))
            .collect()
    }

    /// All turn texts joined, used by scripted backends for content matching.
    pub fn joined_text(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        if let Some(s) = &self.system {
            parts.push(s);
        }
        parts.extend(self.turns.iter().map(|t| t.text.as_str()));
        parts.join("\n")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.turns.iter().any(|t| t.role == Role::User) {
            return Err(GatewayError::InvalidRequest("no user turn".into()));
        }
        let images = self.image_count();
        if images > MAX_REQUEST_IMAGES {
            return Err(GatewayError::InvalidRequest(format!(
                "{images} images exceed the request cap of {MAX_REQUEST_IMAGES}"
            )));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} out of range",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens is zero".into()));
        }
        for turn in &self.turns {
            if turn.role == Role::Assistant && !turn.images.is_empty() {
                return Err(GatewayError::InvalidRequest(
                    "assistant turns cannot carry images".into(),
                ));
            }
            if turn.text.is_empty() && turn.images.is_empty() {
                return Err(GatewayError::InvalidRequest("empty turn".into()));
            }
        }
        Ok(())
    }
}

impl Default for ChatRequest {
    fn default() -> Self {
        Self::new()
    }
}

/// What a backend hands back for one call.
#[derive(Debug, Clone)]
pub struct BackendResponse {
    pub text: String,
    /// Endpoint-reported token usage, when the endpoint provides it.
    pub usage: Option<TokenUsage>,
    /// Whether the endpoint actually enforced the requested response schema.
    pub schema_enforced: bool,
}

/// A chat endpoint. Implementations must be safe to call from worker threads.
pub trait Backend: Send + Sync {
    fn chat(
        &self,
        model: &str,
        module: ModuleTag,
        request: &ChatRequest,
    ) -> Result<BackendResponse, BackendError>;

    fn name(&self) -> &'static str;
}

/// A gateway response with its priced usage attached.
#[derive(Debug, Clone)]
pub struct GatewayResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub cost_usd: f64,
    /// True when usage came from local estimation rather than the endpoint.
    pub estimated: bool,
}

#[derive(Clone)]
struct ModelBinding {
    model: String,
    backend: Arc<dyn Backend>,
}

/// Routes module calls to their bound model and backend, with retry, pricing
/// and ledgering. `fork` gives worker threads their own ledger; `absorb`
/// folds those records back into the parent.
pub struct Gateway {
    bindings: BTreeMap<ModuleTag, ModelBinding>,
    pricing: Arc<PricingTable>,
    ledger: Mutex<UsageLedger>,
    max_transport_retries: u32,
    retry_backoff_ms: u64,
}

impl Gateway {
    pub fn new(pricing: PricingTable) -> Self {
        Self {
            bindings: BTreeMap::new(),
            pricing: Arc::new(pricing),
            ledger: Mutex::new(UsageLedger::new()),
            max_transport_retries: 2,
            retry_backoff_ms: 0,
        }
    }

    pub fn retry_policy(mut self, max_transport_retries: u32, backoff_ms: u64) -> Self {
        self.max_transport_retries = max_transport_retries;
        self.retry_backoff_ms = backoff_ms;
        self
    }

    pub fn bind(
        &mut self,
        module: ModuleTag,
        model: impl Into<String>,
        backend: Arc<dyn Backend>,
    ) {
        self.bindings.insert(module, ModelBinding { model: model.into(), backend });
    }

    pub fn model_for(&self, module: ModuleTag) -> Option<&str> {
        self.bindings.get(&module).map(|b| b.model.as_str())
    }

    pub fn pricing(&self) -> &PricingTable {
        &self.pricing
    }

    /// A child gateway with the same bindings and an empty ledger.
    pub fn fork(&self) -> Gateway {
        Gateway {
            bindings: self.bindings.clone(),
            pricing: Arc::clone(&self.pricing),
            ledger: Mutex::new(UsageLedger::new()),
            max_transport_retries: self.max_transport_retries,
            retry_backoff_ms: self.retry_backoff_ms,
        }
    }

    /// Folds records (typically from a forked child) into this ledger.
    pub fn absorb(&self, records: Vec<UsageRecord>) {
        self.ledger.lock().unwrap().absorb(records);
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.ledger.lock().unwrap().records().to_vec()
    }

    pub fn take_records(&self) -> Vec<UsageRecord> {
        std::mem::take(&mut *self.ledger.lock().unwrap()).into_records()
    }

    pub fn report(&self) -> LedgerReport {
        self.ledger.lock().unwrap().report()
    }

    pub fn agent_cost_usd(&self) -> f64 {
        self.ledger.lock().unwrap().agent_cost_usd()
    }

    /// Sends one request on behalf of `module`. Transport failures are
    /// retried up to the configured limit; every successful call lands in the
    /// ledger, priced from endpoint usage when reported and local estimates
    /// otherwise.
    pub fn call(
        &self,
        module: ModuleTag,
        request: &ChatRequest,
    ) -> Result<GatewayResponse, GatewayError> {
        request.validate()?;
        let binding =
            self.bindings.get(&module).ok_or(GatewayError::NoBinding(module))?;
        let pricing = self
            .pricing
            .get(&binding.model)
            .ok_or_else(|| GatewayError::UnknownModel(binding.model.clone()))?;

        let mut last_transport: Option<BackendError> = None;
        let mut response = None;
        for attempt in 0..=self.max_transport_retries {
            match binding.backend.chat(&binding.model, module, request) {
                Ok(r) => {
                    response = Some(r);
                    break;
                }
                Err(BackendError::Transport(msg)) => {
                    log::warn!(
                        "{module} call attempt {attempt} failed in transport: {msg}; retrying"
                    );
                    last_transport = Some(BackendError::Transport(msg));
                    self.backoff();
                }
                Err(other) => return Err(other.into()),
            }
        }
        let response = match response {
            Some(r) => r,
            None => return Err(last_transport.expect("loop ran at least once").into()),
        };

        let (usage, estimated) = match response.usage {
            Some(u) => (u, false),
            None => (
                TokenUsage {
                    input_tokens: estimate_input_tokens(
                        request.text_chars(),
                        &request.image_dims(),
                        pricing.tokens_1200,
                    ),
                    output_tokens: estimate_output_tokens(response.text.chars().count()),
                },
                true,
            ),
        };
        let cost_usd = self.pricing.price(&binding.model, usage)?;
        self.ledger.lock().unwrap().record(UsageRecord {
            module,
            model: binding.model.clone(),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            cost_usd,
            estimated,
        });
        Ok(GatewayResponse { text: response.text, usage, cost_usd, estimated })
    }

    #[cfg(not(target_arch = "wasm32"))]
    fn backoff(&self) {
        if self.retry_backoff_ms > 0 {
            std::thread::sleep(std::time::Duration::from_millis(self.retry_backoff_ms));
        }
    }

    #[cfg(target_arch = "wasm32")]
    fn backoff(&self) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png_image(side: u32) -> Arc<ImageData> {
        let img = image::RgbImage::from_pixel(side, side, image::Rgb([8, 8, 8]));
        let mut out = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
        Arc::new(ImageData::from_png(out).unwrap())
    }

    fn payloads(n: usize, side: u32) -> Vec<ImagePayload> {
        let data = png_image(side);
        (0..n)
            .map(|_| ImagePayload::new(ImageId::of_bytes(&data.png), Arc::clone(&data)))
            .collect()
    }

    fn gateway_with_script(rules: Vec<MockRule>) -> Gateway {
        let mut g = Gateway::new(PricingTable::default());
        g.bind(ModuleTag::Policy, "gpt-4o", Arc::new(MockBackend::new(rules)));
        g
    }

    #[test]
    fn request_image_cap_is_enforced() {
        let req = ChatRequest::new().user("look", payloads(5, 4));
        assert!(matches!(req.validate(), Err(GatewayError::InvalidRequest(_))));
        let req = ChatRequest::new().user("look", payloads(4, 4));
        assert!(req.validate().is_ok());
    }

    #[test]
    fn request_needs_a_user_turn() {
        let req = ChatRequest::new().assistant("hello");
        assert!(req.validate().is_err());
    }

    #[test]
    fn endpoint_usage_wins_over_estimation() {
        let g = gateway_with_script(vec![MockRule::reply("ok").usage(872, 50)]);
        let resp = g.call(ModuleTag::Policy, &ChatRequest::new().user("hi", vec![])).unwrap();
        assert!(!resp.estimated);
        assert_eq!(resp.usage.input_tokens, 872);
        assert_eq!(resp.cost_usd, 0.002680);
        let records = g.records();
        assert_eq!(records.len(), 1);
        assert!(!records[0].estimated);
    }

    #[test]
    fn missing_usage_falls_back_to_estimation() {
        let g = gateway_with_script(vec![MockRule::reply("12345678")]);
        let req = ChatRequest::new().user("abcd", payloads(1, 1200));
        let resp = g.call(ModuleTag::Policy, &req).unwrap();
        assert!(resp.estimated);
        // 4 chars of text plus one full-size screenshot at gpt-4o's anchor.
        assert_eq!(resp.usage.input_tokens, 1 + 772);
        assert_eq!(resp.usage.output_tokens, 2);
    }

    #[test]
    fn transport_errors_are_retried_then_surface() {
        let g = gateway_with_script(vec![
            MockRule::transport_error().times(1),
            MockRule::reply("recovered"),
        ]);
        let resp = g.call(ModuleTag::Policy, &ChatRequest::new().user("hi", vec![])).unwrap();
        assert_eq!(resp.text, "recovered");

        let g = gateway_with_script(vec![MockRule::transport_error()]);
        let err = g.call(ModuleTag::Policy, &ChatRequest::new().user("hi", vec![])).unwrap_err();
        assert!(matches!(err, GatewayError::Backend(BackendError::Transport(_))));
    }

    #[test]
    fn unbound_module_is_an_error() {
        let g = gateway_with_script(vec![]);
        let err = g.call(ModuleTag::Judge, &ChatRequest::new().user("hi", vec![])).unwrap_err();
        assert!(matches!(err, GatewayError::NoBinding(ModuleTag::Judge)));
    }

    #[test]
    fn fork_isolates_ledgers_until_absorbed() {
        let g = gateway_with_script(vec![MockRule::reply("ok")]);
        let child = g.fork();
        child.call(ModuleTag::Policy, &ChatRequest::new().user("hi", vec![])).unwrap();
        assert_eq!(g.records().len(), 0);
        assert_eq!(child.records().len(), 1);
        g.absorb(child.take_records());
        assert_eq!(g.records().len(), 1);
        assert_eq!(child.records().len(), 0);
    }
}
