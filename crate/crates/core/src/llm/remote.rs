//! HTTP chat-completion client (OpenAI-compatible request shape).

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, LlmError, LlmProvider, ProviderRequest};
use crate::net;

pub const API_KEY_ENV: &str = "FINMEM_LLM_API_KEY";
pub const ENDPOINT_ENV: &str = "FINMEM_LLM_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteLlmConfig {
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for RemoteLlmConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4-turbo".into(),
            timeout_secs: 60,
            max_retries: 3,
        }
    }
}

#[derive(Serialize)]
pub(crate) struct ChatRequest<'a> {
    pub model: &'a str,
    pub temperature: f64,
    pub messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

pub struct RemoteProvider {
    config: RemoteLlmConfig,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl RemoteProvider {
    pub fn from_env(config: RemoteLlmConfig) -> Result<Self, LlmError> {
        net::ensure_network_allowed().map_err(LlmError::ProviderUnavailable)?;
        let var = |name: &str| {
            std::env::var(name)
                .map_err(|_| LlmError::ProviderUnavailable(format!("{name} not set")))
        };
        let endpoint = var(ENDPOINT_ENV)?;
        let api_key = var(API_KEY_ENV)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            config,
            endpoint,
            api_key,
            client,
        })
    }

    fn call_once(&self, req: &ProviderRequest<'_>) -> Result<String, String> {
        net::ensure_network_allowed()?;
        let body = ChatRequest {
            model: &self.config.model,
            temperature: req.temperature,
            messages: req.messages,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status()));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| e.to_string())?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "response carried no choices".into())
    }
}

impl LlmProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, req: &ProviderRequest<'_>) -> Result<String, LlmError> {
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.call_once(req) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("chat completion attempt {} failed: {e}", attempt + 1);
                    last = e;
                    std::thread::sleep(Duration::from_millis(500 << attempt.min(5)));
                }
            }
        }
        Err(LlmError::ProviderUnavailable(last))
    }
}
