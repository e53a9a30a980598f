use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Which agent module issued a model call. Spend is tracked per module, and
/// judge calls are bookkept separately so benchmark scoring never inflates
/// the agent's own cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleTag {
    Policy,
    Localizer,
    Validator,
    Judge,
}

impl ModuleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ModuleTag::Policy => "policy",
            ModuleTag::Localizer => "localizer",
            ModuleTag::Validator => "validator",
            ModuleTag::Judge => "judge",
        }
    }

    /// Judge spend is reported but excluded from agent cost totals.
    pub fn counts_toward_agent_cost(self) -> bool {
        !matches!(self, ModuleTag::Judge)
    }
}

impl std::fmt::Display for ModuleTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Token counts for one model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Per-model price sheet entry. Rates are USD per million tokens; `tokens_1200`
/// is how many input tokens the model charges for one 1200x1200 screenshot,
/// which anchors the image term of local token estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPricing {
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
    pub tokens_1200: u32,
}

/// Price sheet keyed by model name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PricingTable {
    models: BTreeMap<String, ModelPricing>,
}

impl Default for PricingTable {
    fn default() -> Self {
        let rows: &[(&str, f64, f64, u32)] = &[
            ("gpt-4o", 2.5, 10.0, 772),
            ("gpt-4o-mini", 0.15, 0.6, 25508),
            ("gpt-4.1", 2.0, 8.0, 772),
            ("gpt-4.1-mini", 0.4, 1.6, 2348),
            ("gemini-2.0-flash", 0.1, 0.4, 1290),
            ("holo1-3b", 0.1, 0.4, 1280),
            ("holo1-7b", 0.15, 0.6, 1280),
            ("qwen2.5-vl-7b-instruct", 0.15, 0.6, 1280),
            ("qwen2.5-vl-32b-instruct", 0.5, 2.0, 1280),
        ];
        let models = rows
            .iter()
            .map(|&(name, input, output, tokens_1200)| {
                (
                    name.to_string(),
                    ModelPricing { input_per_mtok: input, output_per_mtok: output, tokens_1200 },
                )
            })
            .collect();
        Self { models }
    }
}

impl PricingTable {
    pub fn empty() -> Self {
        Self { models: BTreeMap::new() }
    }

    pub fn get(&self, model: &str) -> Option<&ModelPricing> {
        self.models.get(model)
    }

    pub fn insert(&mut self, model: impl Into<String>, pricing: ModelPricing) {
        self.models.insert(model.into(), pricing);
    }

    pub fn models(&self) -> impl Iterator<Item = (&str, &ModelPricing)> {
        self.models.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Cost in USD of one call. Both token kinds are priced per million, so
    /// the whole expression stays in integer-exact f64 territory until the
    /// single final division.
    pub fn price(&self, model: &str, usage: TokenUsage) -> Result<f64, GatewayError> {
        let p = self
            .models
            .get(model)
            .ok_or_else(|| GatewayError::UnknownModel(model.to_string()))?;
        Ok((usage.input_tokens as f64 * p.input_per_mtok
            + usage.output_tokens as f64 * p.output_per_mtok)
            / 1e6)
    }
}

/// Pixel area of the screenshot that anchors per-image token counts.
const ANCHOR_AREA: f64 = 1200.0 * 1200.0;

/// Locally estimates the input token count of a prompt: text at four
/// characters per token (rounded up), plus each image scaled from the model's
/// 1200x1200 anchor by pixel area (rounded to nearest).
pub fn estimate_input_tokens(
    text_chars: usize,
    image_dims: &[(u32, u32)],
    tokens_1200: u32,
) -> u64 {
    let text = (text_chars as u64).div_ceil(4);
    let images: u64 = image_dims
        .iter()
        .map(|&(w, h)| {
            (tokens_1200 as f64 * (w as f64 * h as f64) / ANCHOR_AREA).round() as u64
        })
        .sum();
    text + images
}

/// Locally estimates the token count of a text-only model response.
pub fn estimate_output_tokens(text_chars: usize) -> u64 {
    (text_chars as u64).div_ceil(4)
}

/// One ledger entry: a single model call with its attributed cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub module: ModuleTag,
    pub model: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
    /// True when the endpoint did not report usage and the counts above came
    /// from local estimation.
    pub estimated: bool,
}
