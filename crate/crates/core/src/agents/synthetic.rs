//! Deterministic synthetic forecaster used as an oracle model.
//!
//! A first draw tilts the market baseline toward the realized outcome in
//! logit space and adds Normal noise split into a per-market shared part and
//! a per-agent idiosyncratic part. When other agents' outputs are visible the
//! agent moves toward their mean by `revision_gain`, then back toward the
//! baseline by `anchor_weight`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AgentBackend, AgentRequest, BackendError, BackendResponse};
use crate::fixture::{baseline_price, Market};
use crate::seed::{normal_draw, rng_for, unit_draw};

/// Outcome clamp inside the truth-tilt logit.
pub const OUTCOME_CLAMP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticAgentParams {
    pub truth_tilt: f64,
    pub anchor_weight: f64,
    pub noise_sd: f64,
    pub error_correlation: f64,
    pub revision_gain: f64,
    /// Output tokens per call, capped at `per_call_cap_tokens`.
    pub tokens_per_call: u64,
    /// Fixed input usage; when absent, prompt characters / 4.
    pub input_tokens: Option<u64>,
    pub per_call_cap_tokens: u64,
    pub usd_per_1k_input: f64,
    pub usd_per_1k_output: f64,
    pub malformed_rate: f64,
    pub transport_failure_rate: f64,
}

impl Default for SyntheticAgentParams {
    fn default() -> Self {
        Self {
            truth_tilt: 0.5,
            anchor_weight: 0.3,
            noise_sd: 0.4,
            error_correlation: 0.0,
            revision_gain: 0.8,
            tokens_per_call: 350,
            input_tokens: None,
            per_call_cap_tokens: 1500,
            usd_per_1k_input: 0.005,
            usd_per_1k_output: 0.025,
            malformed_rate: 0.0,
            transport_failure_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyntheticError {
    #[error("degenerate baseline")]
    DegenerateBaseline,
    #[error("market has no baseline: {0}")]
    NoBaseline(String),
    #[error("market is unresolved")]
    Unresolved,
    #[error("parameter {0} outside its range")]
    BadParam(&'static str),
}

impl SyntheticAgentParams {
    pub fn check(&self) -> Result<(), SyntheticError> {
        let unit = [
            ("truth_tilt", self.truth_tilt),
            ("anchor_weight", self.anchor_weight),
            ("error_correlation", self.error_correlation),
            ("revision_gain", self.revision_gain),
            ("malformed_rate", self.malformed_rate),
            ("transport_failure_rate", self.transport_failure_rate),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(SyntheticError::BadParam(name));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(SyntheticError::BadParam("noise_sd"));
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

fn noise(seed: u64, label: &str, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    normal_draw(&mut rng_for(seed, label), sd)
}

/// Round-one draw for `agent_id` on `market`.
pub fn initial_draw(params: &SyntheticAgentParams, market: &Market, agent_id: &str, seed: u64) -> Result<f64, SyntheticError> {
    let q = baseline_price(market).map_err(|e| SyntheticError::NoBaseline(e.to_string()))?;
    if q <= 0.0 || q >= 1.0 {
        return Err(SyntheticError::DegenerateBaseline);
    }
    let y = market.outcome_value().ok_or(SyntheticError::Unresolved)?;
    let target = logit(y.clamp(OUTCOME_CLAMP, 1.0 - OUTCOME_CLAMP));
    let shared = noise(seed, &format!("shared/{}", market.id), params.noise_sd);
    let idio = noise(seed, &format!("idio/{agent_id}/{}", market.id), params.noise_sd);
    let rho = params.error_correlation;
    let e = rho * shared + (1.0 - rho) * idio;
    let x = logit(q) + params.truth_tilt * (target - logit(q)) + e;
    Ok(sigmoid(x))
}

/// Probability reported by a synthetic agent. `own_previous` is the agent's
/// last output if its topology lets it see it; otherwise it redraws.
pub fn synthetic_call(
    params: &SyntheticAgentParams,
    market: &Market,
    agent_id: &str,
    own_previous: Option<f64>,
    peers_visible: &[f64],
    seed: u64,
) -> Result<f64, SyntheticError> {
    let p = match own_previous {
        Some(p) => p,
        None => initial_draw(params, market, agent_id, seed)?,
    };
    if peers_visible.is_empty() {
        return Ok(p);
    }
    let q = baseline_price(market).map_err(|e| SyntheticError::NoBaseline(e.to_string()))?;
    let g = params.revision_gain;
    let peer_mean = peers_visible.iter().sum::<f64>() / peers_visible.len() as f64;
    let revised = (1.0 - g) * p + g * peer_mean;
    let b = params.anchor_weight;
    Ok((1.0 - b) * revised + b * q)
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticBackend {
    pub params: SyntheticAgentParams,
}

impl SyntheticBackend {
    pub fn new(params: SyntheticAgentParams) -> Self {
        Self { params }
    }

    fn cost(&self, input: u64, output: u64) -> f64 {
        input as f64 / 1000.0 * self.params.usd_per_1k_input + output as f64 / 1000.0 * self.params.usd_per_1k_output
    }
}

impl AgentBackend for SyntheticBackend {
    fn call(&self, request: &AgentRequest<'_>) -> Result<BackendResponse, BackendError> {
        let market = &request.task.market;
        let agent_id = request.agent.id.as_str();
        let label = format!("fail/{agent_id}/{}/{}/{}", market.id, request.round, request.attempt);
        let u = unit_draw(request.seed, &label);
        if u < self.params.transport_failure_rate {
            return Err(BackendError::transient("simulated transport failure"));
        }
        let malformed = u < self.params.transport_failure_rate + self.params.malformed_rate;

        let tools = &request.task.tools;
        let id_input = json!({"market_id": market.id});
        let (_, details) = tools.call_recorded("get_market_details", id_input.clone());
        let (_, history) = tools.call_recorded("get_price_history", id_input);

        let own_previous = request.visible.iter().rev().find(|m| m.from == agent_id).map(|m| m.probability);
        let peers: Vec<f64> = request
            .visible
            .iter()
            .filter(|m| m.from != agent_id)
            .map(|m| m.probability)
            .collect();
        let p = synthetic_call(&self.params, market, agent_id, own_previous, &peers, request.seed)
            .map_err(|e| BackendError::fatal(e.to_string()))?;

        let mut text = format!(
            "{agent_id} round {}: {} peer message(s) considered, {} own prior.\n",
            request.round,
            peers.len(),
            if own_previous.is_some() { "with" } else { "without" }
        );
        if malformed {
            text.push_str("<forecast>{\"probability\": 1.7}</forecast>");
        } else {
            text.push_str(&format!("<forecast>{{\"probability\": {p:.4}}}</forecast>"));
        }
        let input_tokens = self.params.input_tokens.unwrap_or_else(|| {
            ((request.system_prompt.len() + request.user_prompt.len()) as u64).div_ceil(4)
        });
        let output_tokens = self.params.tokens_per_call.min(self.params.per_call_cap_tokens);
        Ok(BackendResponse {
            response_text: text,
            input_tokens,
            output_tokens,
            cost_usd: self.cost(input_tokens, output_tokens),
            tool_calls: vec![details, history],
        })
    }
}
