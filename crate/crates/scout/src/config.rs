//! Application configuration: which models power which modules, how the
//! browser environment is sized, what the episode budgets are, and where
//! artifacts land. Loaded from a TOML file; every field has a default, so a
//! minimal sim-mode config is just `mode = "sim"`.
//!
//! Credentials never live in config files. A live binding names the
//! environment variable that holds its API key; the key itself stays in the
//! process environment, so serialized configs and reports are safe to share.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::gateway::{ModelPricing, ModuleTag, PricingTable};
use crate::orchestrator::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{module} is bound to {model:?}, which has no pricing entry")]
    UnpricedModel { module: &'static str, model: String },
    #[error("{module} needs {field} in live mode")]
    MissingLiveField { module: &'static str, field: &'static str },
    #[error("environment variable {var} (API key for {module}) is not set")]
    MissingKeyVar { module: &'static str, var: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Simulated browser, no network, no credentials.
    Sim,
    /// Real endpoints: HTTP model backends and a WebDriver browser.
    Live,
}

/// One module's model endpoint. `base_url` and `api_key_env` matter only in
/// live mode; `api_key_env` names an environment variable and is the only
/// place credentials are ever referenced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBinding {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
}

impl ModelBinding {
    pub fn new(model: impl Into<String>) -> Self {
        Self { model: model.into(), base_url: None, api_key_env: None, timeout_ms: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub policy: ModelBinding,
    pub localizer: ModelBinding,
    pub validator: ModelBinding,
    /// Benchmark grading; absent means benchmarks trust the validator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<ModelBinding>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            policy: ModelBinding::new("gpt-4o"),
            localizer: ModelBinding::new("holo1-3b"),
            validator: ModelBinding::new("gpt-4o"),
            judge: Some(ModelBinding::new("gpt-4o")),
        }
    }
}

impl ModelsConfig {
    /// Bindings in a fixed order, with the module each one powers.
    pub fn entries(&self) -> Vec<(ModuleTag, &'static str, &ModelBinding)> {
        let mut entries = vec![
            (ModuleTag::Policy, "policy", &self.policy),
            (ModuleTag::Localizer, "localizer", &self.localizer),
            (ModuleTag::Validator, "validator", &self.validator),
        ];
        if let Some(judge) = &self.judge {
            entries.push((ModuleTag::Judge, "judge", judge));
        }
        entries
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Episode traces and their screenshots.
    pub traces_dir: PathBuf,
    /// Benchmark and grounding reports.
    pub reports_dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { traces_dir: PathBuf::from("runs/traces"), reports_dir: PathBuf::from("runs/reports") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub mode: Mode,
    pub models: ModelsConfig,
    pub env: EnvConfig,
    pub run: RunConfig,
    /// Price sheet additions and overrides, merged over the built-in table.
    pub pricing: BTreeMap<String, ModelPricing>,
    pub output: OutputConfig,
    /// WebDriver endpoint for live mode.
    pub webdriver_url: String,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sim,
            models: ModelsConfig::default(),
            env: EnvConfig::default(),
            run: RunConfig::default(),
            pricing: BTreeMap::new(),
            output: OutputConfig::default(),
            webdriver_url: "http://localhost:9515".into(),
        }
    }
}

impl AppConfig {
    /// The built-in price sheet with this config's overrides applied.
    pub fn pricing_table(&self) -> PricingTable {
        let mut table = PricingTable::default();
        for (model, pricing) in &self.pricing {
            table.insert(model.clone(), *pricing);
        }
        table
    }

    /// Structural and cross-field checks. `check_env_vars` additionally
    /// requires every live-mode key variable to exist in the process
    /// environment; loading at startup passes true, tests that only inspect
    /// the config pass false.
    pub fn validate(&self, check_env_vars: bool) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.run.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let table = self.pricing_table();
        for (_, name, binding) in self.models.entries() {
            if binding.model.trim().is_empty() {
                return Err(ConfigError::Invalid(format!("{name} model id is empty")));
            }
            if table.get(&binding.model).is_none() {
                return Err(ConfigError::UnpricedModel {
                    module: name,
                    model: binding.model.clone(),
                });
            }
            if self.mode == Mode::Live {
                if binding.base_url.as_deref().map_or(true, |u| u.trim().is_empty()) {
                    return Err(ConfigError::MissingLiveField { module: name, field: "base_url" });
                }
                let var = binding.api_key_env.as_deref().unwrap_or("");
                if var.trim().is_empty() {
                    return Err(ConfigError::MissingLiveField {
                        module: name,
                        field: "api_key_env",
                    });
                }
                if check_env_vars && std::env::var(var).is_err() {
                    return Err(ConfigError::MissingKeyVar { module: name, var: var.into() });
                }
            }
        }
        if self.output.traces_dir.as_os_str().is_empty()
            || self.output.reports_dir.as_os_str().is_empty()
        {
            return Err(ConfigError::Invalid("output directories must not be empty".into()));
        }
        Ok(())
    }
}

/// Reads and fully validates a TOML config. In live mode this checks that
/// every referenced API key variable exists, so a bad deployment fails at
/// startup instead of mid-run.
pub fn load_config(path: &Path) -> Result<AppConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config: AppConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    config.validate(true)?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sim_config_loads_with_paper_defaults() {
        let config: AppConfig = toml::from_str("mode = \"sim\"").unwrap();
        config.validate(true).unwrap();
        assert_eq!(config.mode, Mode::Sim);
        assert_eq!(config.run.max_steps, 30);
        assert_eq!(config.run.max_attempts, 10);
        assert_eq!(config.env.viewport_width, 1200);
        assert_eq!(config.env.viewport_height, 1200);
        let table = config.pricing_table();
        let gpt4o = table.get("gpt-4o").unwrap();
        assert_eq!(gpt4o.input_per_mtok, 2.5);
        assert_eq!(gpt4o.output_per_mtok, 10.0);
    }

    #[test]
    fn an_empty_file_is_the_default_config() {
        let config: AppConfig = toml::from_str("").unwrap();
        assert_eq!(config, AppConfig::default());
        config.validate(true).unwrap();
    }

    #[test]
    fn unpriced_model_is_rejected_by_name() {
        let config: AppConfig = toml::from_str(
            "[models.policy]\nmodel = \"mystery-model\"\n",
        )
        .unwrap();
        let err = config.validate(true).unwrap_err();
        assert!(matches!(
            &err,
            ConfigError::UnpricedModel { module: "policy", model } if model == "mystery-model"
        ));
        assert!(err.to_string().contains("mystery-model"));
    }

    #[test]
    fn pricing_overrides_make_new_models_bindable() {
        let config: AppConfig = toml::from_str(
            r#"
            [models.policy]
            model = "in-house-vlm"

            [pricing."in-house-vlm"]
            input_per_mtok = 1.0
            output_per_mtok = 2.0
            tokens_1200 = 800
            "#,
        )
        .unwrap();
        config.validate(true).unwrap();
        assert_eq!(config.pricing_table().get("in-house-vlm").unwrap().tokens_1200, 800);
    }

    #[test]
    fn overrides_replace_built_in_rates() {
        let config: AppConfig = toml::from_str(
            r#"
            [pricing."gpt-4o"]
            input_per_mtok = 5.0
            output_per_mtok = 15.0
            tokens_1200 = 772
            "#,
        )
        .unwrap();
        assert_eq!(config.pricing_table().get("gpt-4o").unwrap().input_per_mtok, 5.0);
    }

    #[test]
    fn run_overrides_apply() {
        let config: AppConfig = toml::from_str("[run]\nmax_steps = 5\n").unwrap();
        assert_eq!(config.run.max_steps, 5);
        assert_eq!(config.run.max_attempts, 10);
    }

    #[test]
    fn live_mode_requires_endpoint_and_key_variable() {
        let base: AppConfig = toml::from_str("mode = \"live\"").unwrap();
        let err = base.validate(false).unwrap_err();
        assert!(matches!(err, ConfigError::MissingLiveField { module: "policy", field: "base_url" }));

        let mut config = base.clone();
        for binding in [
            &mut config.models.policy,
            &mut config.models.localizer,
            &mut config.models.validator,
            config.models.judge.as_mut().unwrap(),
        ] {
            binding.base_url = Some("https://api.example.com/v1".into());
            binding.api_key_env = Some("SCOUT_TEST_KEY_THAT_IS_NOT_SET".into());
        }
        config.validate(false).unwrap();
        let err = config.validate(true).unwrap_err();
        assert!(matches!(err, ConfigError::MissingKeyVar { .. }));
        assert!(err.to_string().contains("SCOUT_TEST_KEY_THAT_IS_NOT_SET"));
    }

    #[test]
    fn serialized_configs_carry_variable_names_not_secrets() {
        std::env::set_var("SCOUT_CONFIG_TEST_KEY", "sk-super-secret-value");
        let mut config = AppConfig::default();
        config.mode = Mode::Live;
        config.models.policy.base_url = Some("https://api.example.com/v1".into());
        config.models.policy.api_key_env = Some("SCOUT_CONFIG_TEST_KEY".into());

        let as_toml = toml::to_string_pretty(&config).unwrap();
        let as_json = serde_json::to_string(&config).unwrap();
        for text in [&as_toml, &as_json] {
            assert!(text.contains("SCOUT_CONFIG_TEST_KEY"));
            assert!(!text.contains("sk-super-secret-value"));
        }

        let back: AppConfig = toml::from_str(&as_toml).unwrap();
        assert_eq!(back, config);
        std::env::remove_var("SCOUT_CONFIG_TEST_KEY");
    }

    #[test]
    fn unknown_fields_are_parse_errors() {
        let err = toml::from_str::<AppConfig>("surprise = true\n").unwrap_err();
        assert!(err.to_string().contains("surprise"));
    }

    #[test]
    fn files_round_trip_through_load_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.toml");
        std::fs::write(&path, "mode = \"sim\"\n[run]\nmax_steps = 12\n").unwrap();
        let config = load_config(&path).unwrap();
        assert_eq!(config.run.max_steps, 12);

        let err = load_config(&dir.path().join("missing.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));

        std::fs::write(&path, "mode = [1, 2]\n").unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }
}
