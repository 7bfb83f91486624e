//! The five reference coordination configurations.

use serde::{Deserialize, Serialize};

use crate::spec::{
    AgentRef, AggregationRule, Authority, AuthorityPolicy, CoordinationSpec, Edge, FailurePolicy, RoundGraph,
    SyncRegime, TerminationRule, TopologySchedule,
};

pub const REFERENCE_NAMES: [&str; 5] = [
    "independent_ensemble",
    "peer_critique_debate",
    "orchestrator_specialist",
    "sequential_pipeline",
    "consensus_alignment",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigParams {
    pub n_peers: u32,
    pub debate_rounds: u32,
    pub consensus_rounds: u32,
    pub consensus_tolerance: f64,
    pub per_call_cap_tokens: u64,
    pub budget_guard_tokens: u64,
    pub temperature: f64,
}

impl Default for ConfigParams {
    fn default() -> Self {
        Self {
            n_peers: 3,
            debate_rounds: 2,
            consensus_rounds: 3,
            consensus_tolerance: 0.05,
            per_call_cap_tokens: 1500,
            budget_guard_tokens: 12_000,
            temperature: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReferenceError {
    #[error("unknown reference configuration {0}")]
    UnknownName(String),
    #[error("invalid parameters: {0}")]
    BadParams(String),
}

impl ConfigParams {
    pub fn check(&self) -> Result<(), ReferenceError> {
        let positive = [
            ("n_peers", self.n_peers as u64),
            ("debate_rounds", self.debate_rounds as u64),
            ("consensus_rounds", self.consensus_rounds as u64),
            ("per_call_cap_tokens", self.per_call_cap_tokens),
            ("budget_guard_tokens", self.budget_guard_tokens),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ReferenceError::BadParams(format!("{name} must be positive")));
            }
        }
        if !(self.consensus_tolerance > 0.0 && self.consensus_tolerance <= 0.5) {
            return Err(ReferenceError::BadParams("consensus_tolerance must lie in (0, 0.5]".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(ReferenceError::BadParams("temperature must be positive".into()));
        }
        Ok(())
    }
}

const PEER_ROLE: &str = "You are an independent forecaster. Study the market with the tools and give your own \
probability that the question resolves YES.";

const DEBATE_ROLE: &str = "You are one of several forecasters in a structured debate. In the first round, give \
your own estimate. In later rounds you will see the other forecasters' previous answers: point out weaknesses \
in their reasoning, defend or revise your estimate, and state your updated probability.";

const CONSENSUS_ROLE: &str = "You are one of several forecasters who must reach a shared estimate. After the \
first round you will see everyone's previous answers. Move toward a probability the whole group can accept, \
explaining what persuaded you.";

const PLANNER_ROLE: &str = "You are the planner. On your first turn, split the question into exactly one \
sub-question per specialist, labelled S1, S2, and so on, and give a provisional probability. When the \
specialist reports arrive, check them and integrate them into the final probability.";

const RESEARCH_ROLE: &str = "You are the research stage. Collect the facts that bear on the question from the \
market details and the price history, summarize them for the analyst, and give a provisional probability.";

const ANALYSIS_ROLE: &str = "You are the analysis stage. Weigh the research notes you receive, identify the \
main drivers and uncertainties, and give a probability for the forecaster.";

const FORECAST_ROLE: &str = "You are the forecasting stage. Turn the analysis you receive into a final, \
well-calibrated probability.";

fn specialist_role(k: u32) -> String {
    format!(
        "You are specialist {k}. Answer sub-question S{k} from the planner's message as thoroughly as the \
         available information allows, and give your own probability for the main question."
    )
}

fn peers(n: u32, role: &str) -> Vec<AgentRef> {
    (1..=n).map(|k| AgentRef::new(format!("peer_{k}"), role)).collect()
}

/// All ordered pairs plus self-loops, so each peer also sees its own last answer.
fn complete_with_self_loops(agents: &[AgentRef]) -> RoundGraph {
    let mut edges = Vec::new();
    for a in agents {
        for b in agents {
            edges.push(Edge::new(&a.id, &b.id));
        }
    }
    RoundGraph::with_edges(edges)
}

fn mean_authority() -> AuthorityPolicy {
    AuthorityPolicy {
        final_commitment: Some(Authority::Aggregate(AggregationRule::mean())),
        ..Default::default()
    }
}

pub fn build_reference(name: &str, params: &ConfigParams) -> Result<CoordinationSpec, ReferenceError> {
    params.check()?;
    let n = params.n_peers;
    let termination = |max_rounds: u32, tol: Option<f64>| TerminationRule {
        max_rounds,
        convergence_tolerance: tol,
        budget_guard_tokens: params.budget_guard_tokens,
    };
    let spec = match name {
        "independent_ensemble" => CoordinationSpec {
            name: name.into(),
            sync: SyncRegime::RoundBased,
            agents: peers(n, PEER_ROLE),
            topology: TopologySchedule {
                rounds: vec![RoundGraph::empty()],
            },
            authority: mean_authority(),
            aggregation: AggregationRule::mean(),
            termination: termination(1, None),
            failure: FailurePolicy::default(),
        },
        "peer_critique_debate" => {
            let agents = peers(n, DEBATE_ROLE);
            let exchange = complete_with_self_loops(&agents);
            CoordinationSpec {
                name: name.into(),
                sync: SyncRegime::RoundBased,
                agents,
                topology: TopologySchedule {
                    rounds: vec![RoundGraph::empty(), exchange],
                },
                authority: mean_authority(),
                aggregation: AggregationRule::mean(),
                termination: termination(params.debate_rounds, None),
                failure: FailurePolicy::default(),
            }
        }
        "consensus_alignment" => {
            let agents = peers(n, CONSENSUS_ROLE);
            let exchange = complete_with_self_loops(&agents);
            CoordinationSpec {
                name: name.into(),
                sync: SyncRegime::RoundBased,
                agents,
                topology: TopologySchedule { rounds: vec![exchange] },
                authority: mean_authority(),
                aggregation: AggregationRule::mean(),
                termination: termination(params.consensus_rounds, Some(params.consensus_tolerance)),
                failure: FailurePolicy::default(),
            }
        }
        "orchestrator_specialist" => {
            let mut agents = vec![AgentRef::new("planner", PLANNER_ROLE)];
            let mut edges = vec![Edge::new("planner", "planner")];
            for k in 1..=n {
                let id = format!("specialist_{k}");
                agents.push(AgentRef::new(&id, specialist_role(k)));
                edges.push(Edge::new("planner", &id));
                edges.push(Edge::new(&id, "planner"));
            }
            let planner = || Some(Authority::Agent("planner".into()));
            CoordinationSpec {
                name: name.into(),
                sync: SyncRegime::EventDriven,
                agents,
                topology: TopologySchedule {
                    rounds: vec![RoundGraph::with_edges(edges)],
                },
                authority: AuthorityPolicy {
                    sub_question_routing: planner(),
                    intermediate_acceptance: planner(),
                    final_commitment: planner(),
                },
                aggregation: AggregationRule::select("planner"),
                termination: termination(1, None),
                failure: FailurePolicy::default(),
            }
        }
        "sequential_pipeline" => CoordinationSpec {
            name: name.into(),
            sync: SyncRegime::EventDriven,
            agents: vec![
                AgentRef::new("research", RESEARCH_ROLE),
                AgentRef::new("analysis", ANALYSIS_ROLE),
                AgentRef::new("forecast", FORECAST_ROLE),
            ],
            topology: TopologySchedule {
                rounds: vec![RoundGraph::with_edges(vec![
                    Edge::new("research", "analysis"),
                    Edge::new("analysis", "forecast"),
                ])],
            },
            authority: AuthorityPolicy {
                final_commitment: Some(Authority::Agent("forecast".into())),
                ..Default::default()
            },
            aggregation: AggregationRule::select("forecast"),
            termination: termination(1, None),
            failure: FailurePolicy::default(),
        },
        other => return Err(ReferenceError::UnknownName(other.to_string())),
    };
    Ok(spec)
}

/// Qualitative `(REL, RES)` prediction for a reference configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Signature {
    pub rel: &'static str,
    pub res: &'static str,
}

pub fn predicted_signature(name: &str) -> Result<Signature, ReferenceError> {
    let (rel, res) = match name {
        "independent_ensemble" => ("moderate", "high"),
        "peer_critique_debate" => ("improves over rounds", "declines over rounds"),
        "orchestrator_specialist" => ("low", "moderate"),
        "sequential_pipeline" => ("depends on stage 1", "depends on stage 1"),
        "consensus_alignment" => ("very low relative to the convergence point", "very low"),
        other => return Err(ReferenceError::UnknownName(other.to_string())),
    };
    Ok(Signature { rel, res })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peer_edges(spec: &CoordinationSpec) -> usize {
        spec.topology
            .rounds
            .iter()
            .flat_map(|g| g.edges.iter())
            .filter(|e| !e.is_self_loop())
            .count()
    }

    #[test]
    fn ensemble_defaults() {
        let s = build_reference("independent_ensemble", &ConfigParams::default()).unwrap();
        assert_eq!(s.agents.len(), 3);
        assert_eq!(peer_edges(&s), 0);
        assert_eq!(s.aggregation, AggregationRule::mean());
        assert_eq!(s.termination.max_rounds, 1);
    }

    #[test]
    fn pipeline_is_a_chain() {
        let s = build_reference("sequential_pipeline", &ConfigParams::default()).unwrap();
        let ids: Vec<_> = s.agents.iter().map(|a| a.id.as_str()).collect();
        assert_eq!(ids, ["research", "analysis", "forecast"]);
        assert_eq!(
            s.topology.rounds[0].edges,
            vec![Edge::new("research", "analysis"), Edge::new("analysis", "forecast")]
        );
        assert_eq!(s.termination.max_rounds, 1);
        assert_eq!(s.authority.final_agent(), Some("forecast"));
    }

    #[test]
    fn consensus_termination() {
        let s = build_reference("consensus_alignment", &ConfigParams::default()).unwrap();
        assert_eq!(s.termination.convergence_tolerance, Some(0.05));
        assert_eq!(s.termination.max_rounds, 3);
    }

    #[test]
    fn debate_exchanges_from_round_two() {
        let s = build_reference("peer_critique_debate", &ConfigParams::default()).unwrap();
        assert!(s.topology.graph(1).edges.is_empty());
        assert_eq!(s.topology.graph(2).edges.iter().filter(|e| !e.is_self_loop()).count(), 6);
        assert_eq!(s.termination.max_rounds, 2);
    }

    #[test]
    fn all_valid_across_params() {
        for n in 1..6 {
            for rounds in 1..4 {
                let params = ConfigParams {
                    n_peers: n,
                    debate_rounds: rounds,
                    consensus_rounds: rounds,
                    ..Default::default()
                };
                for name in REFERENCE_NAMES {
                    let s = build_reference(name, &params).unwrap();
                    assert!(s.validate().is_ok(), "{name}: {}", s.validate());
                }
            }
        }
    }

    #[test]
    fn unknown_names() {
        assert!(build_reference("hierarchy", &ConfigParams::default()).is_err());
        assert!(predicted_signature("hierarchy").is_err());
        assert_eq!(predicted_signature("independent_ensemble").unwrap().res, "high");
        assert_eq!(predicted_signature("orchestrator_specialist").unwrap().rel, "low");
        assert_eq!(predicted_signature("consensus_alignment").unwrap().res, "very low");
    }
}
