//! Browser environments. An [`Environment`] executes actions and returns
//! screenshots; the agent never sees anything else. Two implementations: a
//! deterministic simulator rendering synthetic pages ([`SimEnv`]), and a
//! WebDriver client for real browsers (feature `live`).

mod font;
mod render;
mod sim;
mod world;

#[cfg(feature = "live")]
mod live;

pub use sim::SimEnv;
pub use world::{Effect, ElementSpec, PageSpec, TextRegion, WorldSpec};

#[cfg(feature = "live")]
pub use live::{LiveConfig, LiveEnv};

use std::time::Duration;

use crate::domain::{Action, ImageData};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    /// World spec failed validation.
    #[error("world spec invalid: {0}")]
    Spec(String),
    /// The caller broke the environment contract (e.g. unresolved click).
    #[error("environment contract violation: {0}")]
    Contract(String),
    /// Navigation did not settle in time; the episode continues and the
    /// failure is visible in the next screenshot.
    #[error("navigation timeout: {0}")]
    Timeout(String),
    /// The browser is gone; the attempt is over.
    #[error("environment failure: {0}")]
    Fatal(String),
}

/// Viewport size, pacing, and timeouts for an environment instance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub viewport_width: u32,
    pub viewport_height: u32,
    /// How long a Wait action pauses. The simulator accounts for it in
    /// `step_latency` without sleeping.
    pub wait_duration_ms: u64,
    /// Scroll distance as a fraction of viewport height.
    pub scroll_fraction: f64,
    pub navigation_timeout_ms: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            viewport_width: 1200,
            viewport_height: 1200,
            wait_duration_ms: 2000,
            scroll_fraction: 0.75,
            navigation_timeout_ms: 15_000,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.viewport_width == 0 || self.viewport_height == 0 {
            return Err(EnvError::Spec("viewport dimensions must be positive".into()));
        }
        if self.wait_duration_ms == 0 || self.navigation_timeout_ms == 0 {
            return Err(EnvError::Spec("durations must be positive".into()));
        }
        if !(self.scroll_fraction > 0.0 && self.scroll_fraction <= 1.0) {
            return Err(EnvError::Spec(format!(
                "scroll_fraction {} not in (0, 1]",
                self.scroll_fraction
            )));
        }
        Ok(())
    }

    /// Pixels one scroll action moves.
    pub fn scroll_step(&self) -> u32 {
        (self.scroll_fraction * self.viewport_height as f64).floor() as u32
    }
}

/// What the agent gets back after every action: a viewport-sized screenshot,
/// the current URL, and how long the step took.
#[derive(Debug, Clone)]
pub struct Observation {
    pub screenshot: ImageData,
    pub url: String,
    pub step_latency: Duration,
}

/// A browser the agent can drive. Implementations are single-threaded per
/// instance; the harness creates one instance per episode.
pub trait Environment {
    /// Applies one action and returns the resulting view. Click and Type
    /// actions must arrive with resolved coordinates.
    fn execute(&mut self, action: &Action) -> Result<Observation, EnvError>;

    /// Captures the current view without acting.
    fn observe(&mut self) -> Result<Observation, EnvError>;

    fn current_url(&self) -> String;

    /// Returns the environment to its starting location with fresh state.
    fn reset(&mut self) -> Result<Observation, EnvError>;
}
