//! HTTP backend for a messages-style LLM API with tool use.
//!
//! Token usage is taken from the response's `usage` block; there is no local
//! tokenizer. Every request carries the per-call output cap as `max_tokens`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::tools::tool_definitions;
use super::{AgentBackend, AgentRequest, BackendError, BackendResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model: String,
    pub api_key_env: String,
    pub api_version: String,
    pub per_call_cap_tokens: u64,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
    /// Tool round trips allowed inside one call.
    pub max_tool_turns: u32,
    pub usd_per_1k_input: f64,
    pub usd_per_1k_output: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.anthropic.com/v1/messages".into(),
            model: "claude-opus-4-6".into(),
            api_key_env: "ANTHROPIC_API_KEY".into(),
            api_version: "2023-06-01".into(),
            per_call_cap_tokens: 1500,
            temperature: 0.3,
            timeout_secs: 120,
            max_concurrency: 4,
            max_tool_turns: 6,
            usd_per_1k_input: 0.005,
            usd_per_1k_output: 0.025,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore lock");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct LlmBackend {
    config: LlmConfig,
    api_key: String,
    http: ureq::Agent,
    slots: Semaphore,
}

impl LlmBackend {
    /// Reads the credential from the environment variable named in the config.
    pub fn from_env(config: LlmConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| BackendError::fatal(format!("environment variable {} is not set", config.api_key_env)))?;
        Ok(Self::with_api_key(config, key))
    }

    pub fn with_api_key(config: LlmConfig, api_key: String) -> Self {
        let http = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
                .http_status_as_error(false)
                .build(),
        );
        Self {
            slots: Semaphore::new(config.max_concurrency),
            config,
            api_key,
            http,
        }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let _permit = self.slots.acquire();
        let response = self
            .http
            .post(&self.config.endpoint_url)
            .header("x-api-key", &self.api_key)
            .header("anthropic-version", &self.config.api_version)
            .send_json(body)
            .map_err(|e| BackendError::transient(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| BackendError::transient(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(BackendError::transient(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::fatal(format!("HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| BackendError::transient(format!("malformed body: {e}")))
    }
}

impl AgentBackend for LlmBackend {
    fn call(&self, request: &AgentRequest<'_>) -> Result<BackendResponse, BackendError> {
        let tools: Vec<Value> = tool_definitions()
            .into_iter()
            .map(|d| json!({"name": d.name, "description": d.description, "input_schema": d.input_schema}))
            .collect();
        let mut messages = vec![json!({"role": "user", "content": request.user_prompt})];
        let mut out = BackendResponse::default();
        for turn in 0..=self.config.max_tool_turns {
            let body = json!({
                "model": self.config.model,
                "max_tokens": self.config.per_call_cap_tokens,
                "temperature": self.config.temperature,
                "system": request.system_prompt,
                "tools": tools,
                "messages": messages,
            });
            let reply = self.post(&body)?;
            let usage = reply.get("usage").ok_or_else(|| BackendError::transient("malformed body: no usage"))?;
            out.input_tokens += usage.get("input_tokens").and_then(Value::as_u64).unwrap_or(0);
            out.output_tokens += usage.get("output_tokens").and_then(Value::as_u64).unwrap_or(0);
            let content = reply
                .get("content")
                .and_then(Value::as_array)
                .ok_or_else(|| BackendError::transient("malformed body: no content"))?;
            let text: Vec<&str> = content
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect();
            out.response_text = text.join("\n");
            let uses: Vec<&Value> = content
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("tool_use"))
                .collect();
            let wants_tools = reply.get("stop_reason").and_then(Value::as_str) == Some("tool_use");
            if !wants_tools || uses.is_empty() || turn == self.config.max_tool_turns {
                break;
            }
            let mut results = Vec::with_capacity(uses.len());
            for block in uses {
                let name = block.get("name").and_then(Value::as_str).unwrap_or_default();
                let input = block.get("input").cloned().unwrap_or(Value::Null);
                let (output, record) = request.task.tools.call_recorded(name, input);
                out.tool_calls.push(record);
                results.push(json!({
                    "type": "tool_result",
                    "tool_use_id": block.get("id").cloned().unwrap_or(Value::Null),
                    "content": output,
                }));
            }
            messages.push(json!({"role": "assistant", "content": content}));
            messages.push(json!({"role": "user", "content": results}));
        }
        out.cost_usd = out.input_tokens as f64 / 1000.0 * self.config.usd_per_1k_input
            + out.output_tokens as f64 / 1000.0 * self.config.usd_per_1k_output;
        Ok(out)
    }
}
