//! Blocking HTTP transport for chat-completion backends.

use std::time::Duration;

use anyhow::{Context, Result};
use atgen_core::agent::llm::{ChatRequest, ChatResponse, ChatTransport, ENV_API_KEY, ENV_MODEL, ENV_URL};

pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

/// `ATGEN_LLM_URL` may be a full endpoint or an API base such as
/// `https://host/v1`; the latter gets `/chat/completions` appended.
pub fn endpoint(url: &str) -> String {
    let url = url.trim_end_matches('/');
    if url.ends_with("/chat/completions") {
        url.to_string()
    } else {
        format!("{url}/chat/completions")
    }
}

impl HttpTransport {
    pub fn new(url: &str, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build();
        HttpTransport {
            agent: ureq::Agent::new_with_config(config),
            url: endpoint(url),
            api_key,
        }
    }

    /// Transport and model name from the environment.
    pub fn from_env() -> Result<(Self, String)> {
        let url = std::env::var(ENV_URL).with_context(|| format!("{ENV_URL} must be set for LLM-backed runs"))?;
        let model = std::env::var(ENV_MODEL).with_context(|| format!("{ENV_MODEL} must be set for LLM-backed runs"))?;
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok((HttpTransport::new(&url, key), model))
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, String> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(request).map_err(|e| format!("request to {} failed: {e}", self.url))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(format!("{} returned {status}: {}", self.url, body.trim()));
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| format!("malformed chat response: {e}"))?;
        parsed
            .content()
            .map(str::to_string)
            .ok_or_else(|| "chat response has no choices".to_string())
    }
}
