use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::{AggregationKind, AggregationRule, Authority, CoordinationSpec, RoundGraph, SyncRegime};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// A broken invariant, tagged with the spec element it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub element: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations
            .iter()
            .map(|v| format!("{}: {}", v.element, v.message))
            .collect()
    }

    fn push(&mut self, element: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            element: element.to_string(),
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        write!(f, "{}", self.messages().join("; "))
    }
}

pub(super) fn validate_spec(spec: &CoordinationSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    if spec.name.trim().is_empty() {
        report.push("name", "name must be non-empty");
    }

    // (i) agents
    let mut ids = BTreeSet::new();
    if spec.agents.is_empty() {
        report.push("agents", "at least one agent is required");
    }
    for agent in &spec.agents {
        if agent.id.trim().is_empty() {
            report.push("agents", "agent id must be non-empty");
        }
        if !ids.insert(agent.id.as_str()) {
            report.push("agents", format!("duplicate agent id {}", agent.id));
        }
        if agent.role_instruction.trim().is_empty() {
            report.push("agents", format!("agent {} has an empty role_instruction", agent.id));
        }
    }

    // (ii) topology
    if spec.topology.rounds.is_empty() {
        report.push("topology", "schedule must define at least one round");
    }
    for (i, graph) in spec.topology.rounds.iter().enumerate() {
        for edge in &graph.edges {
            for end in [&edge.from, &edge.to] {
                if !ids.contains(end.as_str()) {
                    report.push("topology", format!("unknown endpoint {end} in round {}", i + 1));
                }
            }
        }
    }

    // (iii) authority
    if spec.authority.final_commitment.is_none() {
        report.push("authority", "final_commitment must be assigned");
    }
    for (class, authority) in [
        ("sub_question_routing", &spec.authority.sub_question_routing),
        ("intermediate_acceptance", &spec.authority.intermediate_acceptance),
        ("final_commitment", &spec.authority.final_commitment),
    ] {
        match authority {
            Some(Authority::Agent(id)) if !ids.contains(id.as_str()) => {
                report.push("authority", format!("{class} names unknown agent {id}"));
            }
            Some(Authority::Aggregate(rule)) => check_rule(&mut report, "authority", rule, &ids),
            _ => {}
        }
    }

    // (iv) synchronization
    if spec.sync != SyncRegime::RoundBased {
        let authorities: BTreeSet<&str> = spec.authority.authority_agents().collect();
        for (i, graph) in spec.topology.rounds.iter().enumerate() {
            if has_peer_cycle(graph, &authorities) {
                report.push(
                    "sync",
                    format!("round {} has peer exchange, which requires round_based sync", i + 1),
                );
                break;
            }
        }
    }

    // (v) aggregation
    check_rule(&mut report, "aggregation", &spec.aggregation, &ids);

    // (vi) termination
    let t = &spec.termination;
    if t.max_rounds < 1 {
        report.push("termination", "max_rounds must be at least 1");
    }
    if let Some(eps) = t.convergence_tolerance {
        if !(eps > 0.0 && eps <= 0.5) {
            report.push("termination", format!("convergence_tolerance {eps} outside (0, 0.5]"));
        }
    }
    if t.budget_guard_tokens == 0 {
        report.push("termination", "budget_guard_tokens must be positive");
    }

    // (vii) failure
    let fb = spec.failure.fallback_probability;
    if !(0.0..=1.0).contains(&fb) {
        report.push("failure", format!("fallback_probability {fb} outside [0, 1]"));
    }

    report
}

fn check_rule(report: &mut ValidationReport, element: &str, rule: &AggregationRule, ids: &BTreeSet<&str>) {
    let needs_weights = rule.kind.needs_weights();
    match (&rule.weights, needs_weights) {
        (None, true) => report.push(element, format!("{:?} requires weights", rule.kind)),
        (Some(_), false) => report.push(element, format!("{:?} does not take weights", rule.kind)),
        (Some(weights), true) => {
            for (id, w) in weights {
                if !ids.contains(id.as_str()) {
                    report.push(element, format!("weight for unknown agent {id}"));
                }
                if !(w.is_finite() && *w >= 0.0) {
                    report.push(element, format!("weight for {id} must be nonnegative"));
                }
            }
            let total: f64 = weights.values().sum();
            if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                report.push(element, "weights must sum to 1");
            }
        }
        (None, false) => {}
    }
    let is_select = rule.kind == AggregationKind::SelectByAgent;
    match (&rule.selector, is_select) {
        (None, true) => report.push(element, "select_by_agent requires a selector"),
        (Some(_), false) => report.push(element, "selector is only valid for select_by_agent"),
        (Some(sel), true) if !ids.contains(sel.as_str()) => {
            report.push(element, format!("selector names unknown agent {sel}"));
        }
        _ => {}
    }
}

/// True when the graph contains a directed cycle through agents that hold no
/// single-agent authority, i.e. symmetric peer exchange.
fn has_peer_cycle(graph: &RoundGraph, authorities: &BTreeSet<&str>) -> bool {
    let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
    for e in &graph.edges {
        if e.is_self_loop() || authorities.contains(e.from.as_str()) || authorities.contains(e.to.as_str()) {
            continue;
        }
        adjacency.entry(e.from.as_str()).or_default().push(e.to.as_str());
    }
    // Iterative DFS with colors.
    let mut color: HashMap<&str, u8> = HashMap::new();
    let nodes: Vec<&str> = adjacency.keys().copied().collect();
    for start in nodes {
        if color.get(start).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        color.insert(start, 1);
        while let Some((node, idx)) = stack.pop() {
            let next = adjacency.get(node).and_then(|v| v.get(idx)).copied();
            match next {
                Some(n) => {
                    stack.push((node, idx + 1));
                    match color.get(n).copied().unwrap_or(0) {
                        1 => return true,
                        0 => {
                            color.insert(n, 1);
                            stack.push((n, 0));
                        }
                        _ => {}
                    }
                }
                None => {
                    color.insert(node, 2);
                }
            }
        }
    }
    false
}
