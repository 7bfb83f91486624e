//! Agent endpoints. The interpreter talks to agents only through
//! [`AgentBackend`]; backends see a rendered prompt, the messages their
//! in-edges allow, and the shared [`ToolStack`].

pub mod llm;
pub mod prompt;
pub mod synthetic;
pub mod tools;

use serde::{Deserialize, Serialize};

use crate::fixture::Market;
use crate::spec::{AgentRef, FailurePolicy};
pub use tools::{ToolCall, ToolError, ToolStack};

/// A market plus the tool stack built from it.
#[derive(Debug, Clone)]
pub struct MarketTask {
    pub market: Market,
    pub tools: ToolStack,
}

impl MarketTask {
    pub fn new(market: Market) -> Result<Self, ToolError> {
        let tools = ToolStack::for_market(&market)?;
        Ok(Self { market, tools })
    }
}

/// Another agent's output as delivered along an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleMessage {
    pub from: String,
    pub round: u32,
    pub response_text: String,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct AgentRequest<'a> {
    pub agent: &'a AgentRef,
    pub task: &'a MarketTask,
    pub system_prompt: String,
    pub user_prompt: String,
    pub visible: Vec<VisibleMessage>,
    pub round: u32,
    pub attempt: u32,
    pub seed: u64,
}

/// What one transport attempt returned, before parsing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackendResponse {
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
    pub tool_calls: Vec<ToolCall>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct BackendError {
    pub retryable: bool,
    pub message: String,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            retryable: true,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            retryable: false,
            message: message.into(),
        }
    }
}

pub trait AgentBackend: Send + Sync {
    fn call(&self, request: &AgentRequest<'_>) -> Result<BackendResponse, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    /// `None` when every attempt failed.
    pub probability: Option<f64>,
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
    pub parse_attempts: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("no forecast block")]
    MissingBlock,
    #[error("forecast block is not valid JSON: {0}")]
    BadJson(String),
    #[error("forecast block has no numeric probability")]
    MissingProbability,
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(f64),
}

const OPEN_TAG: &str = "<forecast>";
const CLOSE_TAG: &str = "</forecast>";

/// Probability from the last `<forecast>{"probability": p}</forecast>` block.
/// Out-of-range values are rejected rather than clamped.
pub fn parse_probability(text: &str) -> Result<f64, ParseError> {
    let start = text.rfind(OPEN_TAG).ok_or(ParseError::MissingBlock)? + OPEN_TAG.len();
    let len = text[start..].find(CLOSE_TAG).ok_or(ParseError::MissingBlock)?;
    let body: serde_json::Value =
        serde_json::from_str(text[start..start + len].trim()).map_err(|e| ParseError::BadJson(e.to_string()))?;
    let p = body
        .get("probability")
        .and_then(serde_json::Value::as_f64)
        .ok_or(ParseError::MissingProbability)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(ParseError::OutOfRange(p));
    }
    Ok(p)
}

/// One transport attempt as it should appear in a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub user_prompt: String,
    pub response: BackendResponse,
    pub failed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Invocation {
    Success(AgentOutput),
    /// Retries ran out; the output carries the accumulated usage.
    Exhausted(AgentOutput),
    /// The gate refused an attempt before it was issued.
    Gated,
}

/// Calls the backend, retrying with the repair instruction appended after a
/// transport failure or an unparsable reply, up to `policy.max_retries`
/// extra attempts. `gate` runs before every attempt and can veto it;
/// `observe` sees every attempt that was issued.
pub fn invoke_with_policy(
    backend: &dyn AgentBackend,
    mut request: AgentRequest<'_>,
    policy: &FailurePolicy,
    mut gate: impl FnMut() -> bool,
    mut observe: impl FnMut(&AttemptRecord),
) -> Invocation {
    let base_prompt = request.user_prompt.clone();
    let mut out = AgentOutput {
        probability: None,
        response_text: String::new(),
        input_tokens: 0,
        output_tokens: 0,
        cost_usd: 0.0,
        parse_attempts: 0,
    };
    for attempt in 0..=policy.max_retries {
        if !gate() {
            return Invocation::Gated;
        }
        request.attempt = attempt;
        if attempt > 0 {
            request.user_prompt = prompt::with_repair(&base_prompt, &policy.repair_instruction);
        }
        out.parse_attempts += 1;
        let (response, parsed, retryable) = match backend.call(&request) {
            Ok(response) => {
                let parsed = parse_probability(&response.response_text).map_err(|e| e.to_string());
                (response, parsed, true)
            }
            Err(e) => (BackendResponse::default(), Err(e.message.clone()), e.retryable),
        };
        out.input_tokens += response.input_tokens;
        out.output_tokens += response.output_tokens;
        out.cost_usd += response.cost_usd;
        out.response_text = response.response_text.clone();
        let record = AttemptRecord {
            attempt,
            user_prompt: request.user_prompt.clone(),
            response,
            failed: parsed.is_err(),
            error: parsed.as_ref().err().cloned(),
        };
        observe(&record);
        match parsed {
            Ok(p) => {
                out.probability = Some(p);
                return Invocation::Success(out);
            }
            Err(_) if !retryable => break,
            Err(_) => {}
        }
    }
    Invocation::Exhausted(out)
}
