//! Coordination-layer data model.
//!
//! A [`CoordinationSpec`] describes a multi-agent architecture with seven
//! elements: agent endpoints, a (possibly time-varying) topology, authority,
//! synchronization regime, aggregation, termination and failure handling.
//! Agents are referenced only by interface; the spec never names a model.
//!
//! Specs are stored as TOML documents, one spec per document.

mod aggregate;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use aggregate::{pool, pool_with, AggregateError, PoolOptions, LOG_POOL_CLAMP};
pub use validate::{ValidationReport, Violation};

/// An agent endpoint: a name plus its interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRef {
    pub id: String,
    /// The only prompt content allowed to vary across roles.
    pub role_instruction: String,
    #[serde(default = "default_schema_tag")]
    pub input_schema_tag: String,
    #[serde(default = "default_schema_tag")]
    pub output_schema_tag: String,
}

fn default_schema_tag() -> String {
    "forecast/v1".to_string()
}

impl AgentRef {
    pub fn new(id: impl Into<String>, role_instruction: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            role_instruction: role_instruction.into(),
            input_schema_tag: default_schema_tag(),
            output_schema_tag: default_schema_tag(),
        }
    }
}

/// Permission for `from` to address messages to `to`. Self-loops let an agent
/// see its own prior turn.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.from == self.to
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundGraph {
    #[serde(default)]
    pub edges: Vec<Edge>,
}

impl RoundGraph {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_edges(edges: Vec<Edge>) -> Self {
        Self { edges }
    }

    /// Senders (excluding self) whose messages reach `agent`.
    pub fn in_neighbors<'a>(&'a self, agent: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.to == agent && !e.is_self_loop())
            .map(|e| e.from.as_str())
    }

    pub fn out_neighbors<'a>(&'a self, agent: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |e| e.from == agent && !e.is_self_loop())
            .map(|e| e.to.as_str())
    }

    pub fn has_self_loop(&self, agent: &str) -> bool {
        self.edges.iter().any(|e| e.is_self_loop() && e.from == agent)
    }
}

/// Ordered per-round graphs. Rounds past the end reuse the last graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySchedule {
    pub rounds: Vec<RoundGraph>,
}

impl TopologySchedule {
    /// Graph in force at 1-based `round`.
    pub fn graph(&self, round: u32) -> &RoundGraph {
        let idx = (round.max(1) as usize - 1).min(self.rounds.len().saturating_sub(1));
        &self.rounds[idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionClass {
    SubQuestionRouting,
    IntermediateAcceptance,
    FinalCommitment,
}

/// Who holds a decision: one named agent, or an aggregation operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Authority {
    Agent(String),
    Aggregate(AggregationRule),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuthorityPolicy {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_question_routing: Option<Authority>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_acceptance: Option<Authority>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_commitment: Option<Authority>,
}

impl AuthorityPolicy {
    pub fn get(&self, class: DecisionClass) -> Option<&Authority> {
        match class {
            DecisionClass::SubQuestionRouting => self.sub_question_routing.as_ref(),
            DecisionClass::IntermediateAcceptance => self.intermediate_acceptance.as_ref(),
            DecisionClass::FinalCommitment => self.final_commitment.as_ref(),
        }
    }

    /// Agent ids named as a single authority for any decision class.
    pub fn authority_agents(&self) -> impl Iterator<Item = &str> {
        [
            &self.sub_question_routing,
            &self.intermediate_acceptance,
            &self.final_commitment,
        ]
        .into_iter()
        .filter_map(|a| match a {
            Some(Authority::Agent(id)) => Some(id.as_str()),
            _ => None,
        })
    }

    pub fn routing_agent(&self) -> Option<&str> {
        match &self.sub_question_routing {
            Some(Authority::Agent(id)) => Some(id),
            _ => None,
        }
    }

    pub fn final_agent(&self) -> Option<&str> {
        match &self.final_commitment {
            Some(Authority::Agent(id)) => Some(id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncRegime {
    /// Each agent acts when it has received messages from its in-neighbors.
    EventDriven,
    /// All agents act at each tick and see the previous tick's messages.
    RoundBased,
    /// Agents act in declaration order and see the latest available messages.
    Asynchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    Mean,
    Median,
    WeightedMean,
    LogPool,
    SelectByAgent,
}

impl AggregationKind {
    pub fn needs_weights(self) -> bool {
        matches!(self, Self::WeightedMean | Self::LogPool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRule {
    pub kind: AggregationKind,
    /// Per-agent weights keyed by agent id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<String>,
}

impl AggregationRule {
    pub fn simple(kind: AggregationKind) -> Self {
        Self {
            kind,
            weights: None,
            selector: None,
        }
    }

    pub fn mean() -> Self {
        Self::simple(AggregationKind::Mean)
    }

    pub fn select(agent: impl Into<String>) -> Self {
        Self {
            kind: AggregationKind::SelectByAgent,
            weights: None,
            selector: Some(agent.into()),
        }
    }

    pub fn weighted(kind: AggregationKind, weights: BTreeMap<String, f64>) -> Self {
        Self {
            kind,
            weights: Some(weights),
            selector: None,
        }
    }

    /// Applies the rule to `(agent_id, probability)` pairs.
    ///
    /// Weights are renormalized over the agents present, so a partial set of
    /// outputs (budget guard, excluded agents) still yields a proper pool.
    pub fn apply(&self, outputs: &[(String, f64)]) -> Result<f64, AggregateError> {
        if outputs.is_empty() {
            return Err(AggregateError::NoValues);
        }
        match self.kind {
            AggregationKind::SelectByAgent => {
                let selector = self.selector.as_deref().unwrap_or_default();
                outputs
                    .iter()
                    .find(|(id, _)| id == selector)
                    .map(|(_, p)| *p)
                    .ok_or_else(|| AggregateError::SelectorMissing(selector.to_string()))
            }
            kind => {
                let values: Vec<f64> = outputs.iter().map(|(_, p)| *p).collect();
                let weights = self.weights.as_ref().map(|w| {
                    outputs
                        .iter()
                        .map(|(id, _)| w.get(id).copied().unwrap_or(0.0))
                        .collect::<Vec<_>>()
                });
                pool(kind, &values, weights.as_deref())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationRule {
    pub max_rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_tolerance: Option<f64>,
    pub budget_guard_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustionAction {
    /// End the run and commit `fallback_probability`.
    Fallback,
    /// Drop the agent for the rest of the run.
    Exclude,
    /// End the run without a forecast.
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailurePolicy {
    pub max_retries: u32,
    pub repair_instruction: String,
    #[serde(default = "default_fallback")]
    pub fallback_probability: f64,
    pub on_exhaustion: ExhaustionAction,
}

fn default_fallback() -> f64 {
    0.5
}

impl Default for FailurePolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            repair_instruction: "Your previous reply did not contain a valid forecast block. \
                Reply again and end with exactly one <forecast>{\"probability\": p}</forecast> \
                block where p is a number between 0 and 1."
                .to_string(),
            fallback_probability: 0.5,
            on_exhaustion: ExhaustionAction::Fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationSpec {
    pub name: String,
    pub sync: SyncRegime,
    pub agents: Vec<AgentRef>,
    pub topology: TopologySchedule,
    pub authority: AuthorityPolicy,
    pub aggregation: AggregationRule,
    pub termination: TerminationRule,
    pub failure: FailurePolicy,
}

#[derive(Debug, thiserror::Error)]
pub enum SpecFormatError {
    #[error("cannot parse spec document: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize spec: {0}")]
    Serialize(#[from] toml::ser::Error),
}

impl CoordinationSpec {
    pub fn agent(&self, id: &str) -> Option<&AgentRef> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate_spec(self)
    }

    pub fn from_toml(text: &str) -> Result<Self, SpecFormatError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, SpecFormatError> {
        Ok(toml::to_string(self)?)
    }
}
