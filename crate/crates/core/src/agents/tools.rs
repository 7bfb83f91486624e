//! The fixed tool stack every agent sees, whatever the configuration.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::fixture::{Category, Market, Tick};
use crate::seed::sha256_hex;

pub const MAX_HISTORY_POINTS: usize = 200;
pub const SEARCH_DISABLED_MARKER: &str = "web search is disabled for this evaluation";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToolError {
    #[error("empty price history")]
    EmptyHistory,
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("unknown market {0}")]
    UnknownMarket(String),
}

/// Uniform index downsampling to [`MAX_HISTORY_POINTS`], keeping the first
/// and last tick. Index `k` maps to `round(k (n - 1) / 199)`.
pub fn downsample_ticks(ticks: &[Tick]) -> Result<Vec<Tick>, ToolError> {
    let n = ticks.len();
    if n == 0 {
        return Err(ToolError::EmptyHistory);
    }
    if n <= MAX_HISTORY_POINTS {
        return Ok(ticks.to_vec());
    }
    let span = (MAX_HISTORY_POINTS - 1) as u64;
    Ok((0..MAX_HISTORY_POINTS as u64)
        .map(|k| {
            let idx = (2 * k * (n as u64 - 1) + span) / (2 * span);
            ticks[idx as usize]
        })
        .collect())
}

/// Ticks strictly before the commit deadline, downsampled.
pub fn get_price_history(market: &Market) -> Result<Vec<Tick>, ToolError> {
    let deadline = market.commit_deadline();
    let visible: Vec<Tick> = market.ticks.iter().filter(|t| t.timestamp < deadline).copied().collect();
    downsample_ticks(&visible)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub input: Value,
    pub output_sha256: String,
    pub output_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolDefinition {
    pub name: &'static str,
    pub description: &'static str,
    pub input_schema: Value,
}

pub fn tool_definitions() -> Vec<ToolDefinition> {
    let id_schema = json!({
        "type": "object",
        "properties": {"market_id": {"type": "string"}},
        "required": ["market_id"]
    });
    vec![
        ToolDefinition {
            name: "get_market_details",
            description: "Question text, category, commit deadline and traded volume for a market.",
            input_schema: id_schema.clone(),
        },
        ToolDefinition {
            name: "get_price_history",
            description: "Mid-price history observed before the commit deadline, at most 200 points.",
            input_schema: id_schema,
        },
        ToolDefinition {
            name: "search_web",
            description: "Web search.",
            input_schema: json!({
                "type": "object",
                "properties": {"query": {"type": "string"}},
                "required": ["query"]
            }),
        },
    ]
}

/// Read-only view of one market, with the outcome withheld and the price
/// history already cut at the commit deadline.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolStack {
    market_id: String,
    question: String,
    category: Category,
    commit_deadline: i64,
    volume_usd: f64,
    history: Vec<Tick>,
}

impl ToolStack {
    pub fn for_market(market: &Market) -> Result<Self, ToolError> {
        Ok(Self {
            market_id: market.id.clone(),
            question: market.question.clone(),
            category: market.category,
            commit_deadline: market.commit_deadline(),
            volume_usd: market.volume_usd,
            history: get_price_history(market)?,
        })
    }

    pub fn market_id(&self) -> &str {
        &self.market_id
    }

    pub fn history(&self) -> &[Tick] {
        &self.history
    }

    fn check_id(&self, input: &Value) -> Result<(), ToolError> {
        match input.get("market_id").and_then(Value::as_str) {
            Some(id) if id == self.market_id => Ok(()),
            other => Err(ToolError::UnknownMarket(other.unwrap_or_default().to_string())),
        }
    }

    pub fn get_market_details(&self) -> Value {
        json!({
            "market_id": self.market_id,
            "question": self.question,
            "category": self.category,
            "commit_deadline": self.commit_deadline,
            "volume_usd": self.volume_usd,
        })
    }

    pub fn get_price_history(&self) -> Value {
        json!({
            "market_id": self.market_id,
            "ticks": self.history.iter().map(|t| json!([t.timestamp, t.mid_price])).collect::<Vec<_>>(),
        })
    }

    pub fn search_web(&self, _query: &str) -> Value {
        json!({"results": [], "note": SEARCH_DISABLED_MARKER})
    }

    pub fn call(&self, name: &str, input: &Value) -> Result<Value, ToolError> {
        match name {
            "get_market_details" => {
                self.check_id(input)?;
                Ok(self.get_market_details())
            }
            "get_price_history" => {
                self.check_id(input)?;
                Ok(self.get_price_history())
            }
            "search_web" => Ok(self.search_web(input.get("query").and_then(Value::as_str).unwrap_or(""))),
            other => Err(ToolError::UnknownTool(other.to_string())),
        }
    }

    /// Runs a tool and returns its serialized output with the trace record.
    pub fn call_recorded(&self, name: &str, input: Value) -> (String, ToolCall) {
        let output = match self.call(name, &input) {
            Ok(v) => v.to_string(),
            Err(e) => json!({"error": e.to_string()}).to_string(),
        };
        let record = ToolCall {
            name: name.to_string(),
            input,
            output_sha256: sha256_hex(output.as_bytes()),
            output_len: output.len(),
        };
        (output, record)
    }
}
