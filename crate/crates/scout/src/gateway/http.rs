use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{Backend, BackendError, BackendResponse, ChatRequest, ModuleTag, Role, TokenUsage};

/// Chat-completions client for OpenAI-compatible endpoints.
///
/// The API key is read from the named environment variable at call time and
/// never stored, logged, or serialized. An empty variable name means the
/// endpoint needs no authentication.
pub struct HttpBackend {
    base_url: String,
    api_key_env: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        base_url: &str,
        api_key_env: &str,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        url::Url::parse(base_url)
            .map_err(|e| BackendError::Endpoint { status: 0, message: format!("bad base url: {e}") })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key_env: api_key_env.to_string(),
            client,
        })
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        if self.api_key_env.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.api_key_env) {
            Ok(v) if !v.trim().is_empty() => Ok(Some(v)),
            _ => Err(BackendError::MissingCredentials(format!(
                "environment variable {} is unset or empty",
                self.api_key_env
            ))),
        }
    }

    fn build_body(&self, model: &str, request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({ "role": "system", "content": system }));
        }
        for turn in &request.turns {
            let role = match turn.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            if turn.images.is_empty() {
                messages.push(json!({ "role": role, "content": turn.text }));
            } else {
                let mut content = vec![json!({ "type": "text", "text": turn.text })];
                for image in &turn.images {
                    let b64 = base64::engine::general_purpose::STANDARD.encode(&image.data.png);
                    content.push(json!({
                        "type": "image_url",
                        "image_url": { "url": format!("data:image/png;base64,{b64}") }
                    }));
                }
                messages.push(json!({ "role": role, "content": content }));
            }
        }
        let mut body = json!({
            "model": model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(schema) = &request.schema {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": { "name": schema.id, "schema": schema.schema, "strict": true }
            });
        }
        body
    }
}

impl Backend for HttpBackend {
    fn chat(
        &self,
        model: &str,
        module: ModuleTag,
        request: &ChatRequest,
    ) -> Result<BackendResponse, BackendError> {
        let key = self.api_key()?;
        let body = self.build_body(model, request);
        let mut builder =
            self.client.post(format!("{}/chat/completions", self.base_url)).json(&body);
        if let Some(key) = key {
            builder = builder.bearer_auth(key);
        }
        log::debug!("{module} -> {model}: {} images", request.image_count());

        let response = builder.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status == 408 || status == 429 || status >= 500 {
            return Err(BackendError::Transport(format!("status {status}: {text}")));
        }
        if status >= 400 {
            return Err(BackendError::Endpoint { status, message: text });
        }

        let parsed: Value = serde_json::from_str(&text).map_err(|e| BackendError::Endpoint {
            status,
            message: format!("unparseable response body: {e}"),
        })?;
        let content = parsed["choices"][0]["message"]["content"].as_str().ok_or_else(|| {
            BackendError::Endpoint { status, message: "response carries no message content".into() }
        })?;
        let usage = match (
            parsed["usage"]["prompt_tokens"].as_u64(),
            parsed["usage"]["completion_tokens"].as_u64(),
        ) {
            (Some(input_tokens), Some(output_tokens)) => {
                Some(TokenUsage { input_tokens, output_tokens })
            }
            _ => None,
        };
        Ok(BackendResponse {
            text: content.to_string(),
            usage,
            schema_enforced: request.schema.is_some(),
        })
    }

    fn name(&self) -> &'static str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ImageData, ImageId};
    use crate::gateway::ImagePayload;
    use std::sync::Arc;

    fn backend() -> HttpBackend {
        HttpBackend::new("https://api.example.test/v1/", "", Duration::from_secs(5)).unwrap()
    }

    #[test]
    fn body_carries_schema_and_images() {
        let img = image::RgbImage::from_pixel(2, 2, image::Rgb([1, 2, 3]));
        let mut png = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png).unwrap();
        let data = Arc::new(ImageData::from_png(png).unwrap());
        let payload = ImagePayload::new(ImageId::of_bytes(&data.png), data);

        let request = ChatRequest::new()
            .system("be brief")
            .user("what is here", vec![payload])
            .schema(crate::gateway::SchemaRef { id: "test-schema", schema: json!({"type": "object"}) })
            .temperature(0.1)
            .max_output_tokens(64);
        let body = backend().build_body("gpt-4o", &request);

        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["messages"][0]["role"], "system");
        let content = body["messages"][1]["content"].as_array().unwrap();
        assert_eq!(content[0]["type"], "text");
        assert!(content[1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/png;base64,"));
        assert_eq!(body["response_format"]["json_schema"]["name"], "test-schema");
    }

    #[test]
    fn missing_key_variable_is_reported() {
        let backend =
            HttpBackend::new("https://api.example.test", "SCOUT_TEST_UNSET_KEY", Duration::from_secs(5))
                .unwrap();
        assert!(matches!(backend.api_key(), Err(BackendError::MissingCredentials(_))));
    }

    #[test]
    fn keyless_endpoints_are_allowed() {
        assert!(matches!(backend().api_key(), Ok(None)));
    }
}
