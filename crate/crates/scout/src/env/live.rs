//! WebDriver-backed environment for real browsers. Talks the W3C wire
//! protocol over HTTP to a driver such as chromedriver or geckodriver; the
//! agent still only sees screenshots, URLs, and latencies.

use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::{EnvConfig, EnvError, Environment, Observation};
use crate::domain::{Action, ImageData, Point, ScrollDirection};

const ENTER_KEY: char = '\u{E007}';

/// Where to find the WebDriver endpoint and which page to open first.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LiveConfig {
    /// Base URL of a running WebDriver server, e.g. `http://localhost:9515`.
    pub webdriver_url: String,
    /// Extra browser arguments passed through `goog:chromeOptions`.
    #[serde(default)]
    pub browser_args: Vec<String>,
}

/// A live browser session. Dropping the value deletes the session.
pub struct LiveEnv {
    client: reqwest::blocking::Client,
    base: String,
    session: String,
    config: EnvConfig,
    start_url: String,
}

impl LiveEnv {
    /// Opens a session, sizes the window to the configured viewport, and
    /// navigates to `start_url`.
    pub fn connect(live: &LiveConfig, config: EnvConfig, start_url: &str) -> Result<Self, EnvError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.navigation_timeout_ms + 10_000))
            .build()
            .map_err(|e| EnvError::Fatal(format!("cannot build HTTP client: {e}")))?;
        let base = live.webdriver_url.trim_end_matches('/').to_string();
        let mut args = vec![format!(
            "--window-size={},{}",
            config.viewport_width, config.viewport_height
        )];
        args.extend(live.browser_args.iter().cloned());
        let body = json!({
            "capabilities": {
                "alwaysMatch": {
                    "timeouts": {"pageLoad": config.navigation_timeout_ms},
                    "goog:chromeOptions": {"args": args}
                }
            }
        });
        let value: Value = client
            .post(format!("{base}/session"))
            .json(&body)
            .send()
            .map_err(|e| EnvError::Fatal(format!("cannot reach WebDriver at {base}: {e}")))?
            .error_for_status()
            .map_err(|e| EnvError::Fatal(format!("session creation rejected: {e}")))?
            .json()
            .map_err(|e| EnvError::Fatal(format!("malformed session response: {e}")))?;
        let session = value["value"]["sessionId"]
            .as_str()
            .ok_or_else(|| EnvError::Fatal("session response lacks a sessionId".into()))?
            .to_string();
        let mut env = Self { client, base, session, config, start_url: start_url.to_string() };
        env.command("url", json!({"url": start_url}))?;
        Ok(env)
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/session/{}/{path}", self.base, self.session)
    }

    /// POSTs a session command, mapping driver timeouts to [`EnvError::Timeout`]
    /// and transport failures to [`EnvError::Fatal`].
    fn command(&mut self, path: &str, body: Value) -> Result<Value, EnvError> {
        let response = self
            .client
            .post(self.endpoint(path))
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    EnvError::Timeout(format!("{path} did not finish in time: {e}"))
                } else {
                    EnvError::Fatal(format!("browser connection lost during {path}: {e}"))
                }
            })?;
        let status = response.status();
        let value: Value = response
            .json()
            .map_err(|e| EnvError::Fatal(format!("malformed {path} response: {e}")))?;
        if status == reqwest::StatusCode::INTERNAL_SERVER_ERROR
            && value["value"]["error"].as_str() == Some("timeout")
        {
            return Err(EnvError::Timeout(format!(
                "navigation timed out after {}ms",
                self.config.navigation_timeout_ms
            )));
        }
        if !status.is_success() {
            return Err(EnvError::Fatal(format!(
                "{path} failed with {status}: {}",
                value["value"]["message"].as_str().unwrap_or("no message")
            )));
        }
        Ok(value)
    }

    fn query(&mut self, path: &str) -> Result<Value, EnvError> {
        self.client
            .get(self.endpoint(path))
            .send()
            .map_err(|e| EnvError::Fatal(format!("browser connection lost during {path}: {e}")))?
            .error_for_status()
            .map_err(|e| EnvError::Fatal(format!("{path} failed: {e}")))?
            .json()
            .map_err(|e| EnvError::Fatal(format!("malformed {path} response: {e}")))
    }

    fn screenshot(&mut self) -> Result<ImageData, EnvError> {
        let value = self.query("screenshot")?;
        let encoded = value["value"]
            .as_str()
            .ok_or_else(|| EnvError::Fatal("screenshot response lacks image data".into()))?;
        let png = base64::engine::general_purpose::STANDARD
            .decode(encoded)
            .map_err(|e| EnvError::Fatal(format!("screenshot is not valid base64: {e}")))?;
        ImageData::from_png(png).map_err(|e| EnvError::Fatal(format!("bad screenshot: {e}")))
    }

    fn click(&mut self, point: Point) -> Result<(), EnvError> {
        self.command("actions", pointer_click(point))?;
        Ok(())
    }

    fn require_point(&self, action: &Action) -> Result<Point, EnvError> {
        action
            .target()
            .and_then(|t| t.resolved)
            .ok_or_else(|| {
                EnvError::Contract(format!(
                    "{} action reached the environment without resolved coordinates",
                    action.kind()
                ))
            })
    }
}

impl Drop for LiveEnv {
    fn drop(&mut self) {
        let _ = self
            .client
            .delete(format!("{}/session/{}", self.base, self.session))
            .send();
    }
}

/// W3C pointer sequence for a single left click at viewport coordinates.
fn pointer_click(point: Point) -> Value {
    json!({
        "actions": [{
            "type": "pointer",
            "id": "mouse",
            "parameters": {"pointerType": "mouse"},
            "actions": [
                {"type": "pointerMove", "duration": 0, "x": point.x, "y": point.y, "origin": "viewport"},
                {"type": "pointerDown", "button": 0},
                {"type": "pointerUp", "button": 0}
            ]
        }]
    })
}

/// W3C key sequence typing `text` followed by Enter.
fn key_sequence(text: &str) -> Value {
    let mut actions = Vec::new();
    for c in text.chars().chain([ENTER_KEY]) {
        actions.push(json!({"type": "keyDown", "value": c.to_string()}));
        actions.push(json!({"type": "keyUp", "value": c.to_string()}));
    }
    json!({"actions": [{"type": "key", "id": "keyboard", "actions": actions}]})
}

impl Environment for LiveEnv {
    fn execute(&mut self, action: &Action) -> Result<Observation, EnvError> {
        action
            .validate()
            .map_err(|e| EnvError::Contract(e.to_string()))?;
        let started = Instant::now();
        let result = match action {
            Action::Click { .. } => {
                let point = self.require_point(action)?;
                self.click(point).map(|_| ())
            }
            Action::Type { text, .. } => {
                let point = self.require_point(action)?;
                self.click(point)
                    .and_then(|_| self.command("actions", key_sequence(text)))
                    .map(|_| ())
            }
            Action::Scroll { direction } => {
                let delta = match direction {
                    ScrollDirection::Down => self.config.scroll_step() as i64,
                    ScrollDirection::Up => -(self.config.scroll_step() as i64),
                };
                self.command(
                    "execute/sync",
                    json!({"script": "window.scrollBy(0, arguments[0]);", "args": [delta]}),
                )
                .map(|_| ())
            }
            Action::Wait => {
                std::thread::sleep(Duration::from_millis(self.config.wait_duration_ms));
                Ok(())
            }
            Action::Refresh => self.command("refresh", json!({})).map(|_| ()),
            Action::GoTo { url } => self.command("url", json!({"url": url})).map(|_| ()),
            Action::Back => self.command("back", json!({})).map(|_| ()),
            Action::Answer { .. } => Ok(()),
        };
        match result {
            Ok(()) | Err(EnvError::Timeout(_)) => {}
            Err(other) => return Err(other),
        }
        let screenshot = self.screenshot()?;
        Ok(Observation {
            screenshot,
            url: self.current_url(),
            step_latency: started.elapsed(),
        })
    }

    fn observe(&mut self) -> Result<Observation, EnvError> {
        let started = Instant::now();
        let screenshot = self.screenshot()?;
        Ok(Observation {
            screenshot,
            url: self.current_url(),
            step_latency: started.elapsed(),
        })
    }

    fn current_url(&self) -> String {
        self.client
            .get(self.endpoint("url"))
            .send()
            .ok()
            .and_then(|r| r.json::<Value>().ok())
            .and_then(|v| v["value"].as_str().map(str::to_string))
            .unwrap_or_else(|| "about:blank".to_string())
    }

    /// Live sessions cannot roll back cookies or server state; the closest
    /// faithful reset is returning to the starting page.
    fn reset(&mut self) -> Result<Observation, EnvError> {
        let url = self.start_url.clone();
        self.command("url", json!({"url": url}))?;
        self.observe()
    }
}
