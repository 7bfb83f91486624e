//! Interpreter: executes a [`CoordinationSpec`] on one market and records an
//! [`ExecutionTrace`].
//!
//! Scheduling per regime:
//! - `round_based`: every active agent acts once per round, in declaration
//!   order, seeing the previous round's outputs of its in-neighbors (its own
//!   through a self-loop).
//! - `event_driven`: each round is a cascade started by the routing agent, or
//!   by the agents without in-neighbors. An agent fires once every active
//!   in-neighbor has delivered since its last activation. The round ends when
//!   the final-commitment agent fires on receipt, or when nothing is pending.
//! - `asynchronous`: declaration order, latest available outputs.
//!
//! Before every backend attempt the budget guard projects the next call at
//! the largest call seen so far and stops the run if that would reach the
//! guard. The first call of a run is always issued.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agents::prompt::{render_system, render_user};
use crate::agents::{
    invoke_with_policy, AgentBackend, AgentRequest, AttemptRecord, Invocation, MarketTask, ToolCall, VisibleMessage,
};
use crate::spec::{Authority, CoordinationSpec, ExhaustionAction, RoundGraph, SyncRegime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Completed,
    Convergence,
    BudgetGuard,
    Abort,
}

/// Serialized as a bare number, `{"fallback": p}`, or `null` after an abort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalProbability {
    Value(f64),
    Fallback(f64),
    Missing,
}

impl FinalProbability {
    pub fn probability(self) -> Option<f64> {
        match self {
            FinalProbability::Value(p) | FinalProbability::Fallback(p) => Some(p),
            FinalProbability::Missing => None,
        }
    }

    pub fn is_fallback(self) -> bool {
        matches!(self, FinalProbability::Fallback(_))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FinalRepr {
    Value(f64),
    Fallback { fallback: f64 },
}

impl Serialize for FinalProbability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            FinalProbability::Value(p) => FinalRepr::Value(p).serialize(s),
            FinalProbability::Fallback(p) => FinalRepr::Fallback { fallback: p }.serialize(s),
            FinalProbability::Missing => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for FinalProbability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match Option::<FinalRepr>::deserialize(d)? {
            Some(FinalRepr::Value(p)) => FinalProbability::Value(p),
            Some(FinalRepr::Fallback { fallback }) => FinalProbability::Fallback(fallback),
            None => FinalProbability::Missing,
        })
    }
}

/// One backend attempt. Retries appear as separate records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub agent_id: String,
    pub round_index: u32,
    pub system_prompt: String,
    pub user_prompt: String,
    pub response_text: String,
    pub tool_calls: Vec<ToolCall>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: f64,
    pub failure_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub spec_name: String,
    pub market_id: String,
    pub calls: Vec<CallRecord>,
    pub final_probability: FinalProbability,
    pub total_tokens: u64,
    pub total_cost_usd: f64,
    pub terminated_by: TerminatedBy,
    pub seed: u64,
}

impl ExecutionTrace {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    /// Checks token accounting and the range of the final probability.
    pub fn check_invariants(&self) -> Result<(), String> {
        let sum: u64 = self.calls.iter().map(|c| c.input_tokens + c.output_tokens).sum();
        if sum != self.total_tokens {
            return Err(format!("total_tokens {} != per-call sum {sum}", self.total_tokens));
        }
        match (self.terminated_by, self.final_probability.probability()) {
            (TerminatedBy::Abort, _) => Ok(()),
            (_, Some(p)) if (0.0..=1.0).contains(&p) => Ok(()),
            (_, p) => Err(format!("final probability {p:?} invalid for {:?}", self.terminated_by)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stop {
    Guard,
    Fallback,
    Abort,
}

#[derive(Default)]
struct Ledger {
    calls: Vec<CallRecord>,
    tokens: u64,
    cost: f64,
    largest_call: u64,
}

struct Runner<'a> {
    spec: &'a CoordinationSpec,
    backend: &'a dyn AgentBackend,
    task: &'a MarketTask,
    seed: u64,
    system_prompts: Vec<String>,
    /// Latest `(round, probability, response_text)` per agent index.
    latest: Vec<Option<(u32, f64, String)>>,
    excluded: Vec<bool>,
    ledger: RefCell<Ledger>,
}

impl<'a> Runner<'a> {
    fn index(&self, id: &str) -> Option<usize> {
        self.spec.agents.iter().position(|a| a.id == id)
    }

    fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.spec.agents.len()).filter(|&i| !self.excluded[i])
    }

    /// Agents whose output `i` may read in `graph`, in declaration order.
    fn sources(&self, graph: &RoundGraph, i: usize) -> Vec<usize> {
        let me = self.spec.agents[i].id.as_str();
        (0..self.spec.agents.len())
            .filter(|&j| {
                let other = self.spec.agents[j].id.as_str();
                if j == i {
                    graph.has_self_loop(me)
                } else {
                    graph.edges.iter().any(|e| e.from == other && e.to == me)
                }
            })
            .collect()
    }

    fn messages(&self, from: &[usize], outputs: &[Option<(u32, f64, String)>]) -> Vec<VisibleMessage> {
        from.iter()
            .filter(|&&j| !self.excluded[j])
            .filter_map(|&j| {
                outputs[j].as_ref().map(|(round, p, text)| VisibleMessage {
                    from: self.spec.agents[j].id.clone(),
                    round: *round,
                    response_text: text.clone(),
                    probability: *p,
                })
            })
            .collect()
    }

    fn guard_allows(&self) -> bool {
        let ledger = self.ledger.borrow();
        ledger.calls.is_empty() || ledger.tokens + ledger.largest_call < self.spec.termination.budget_guard_tokens
    }

    fn record(&self, i: usize, round: u32, attempt: &AttemptRecord) {
        let agent = &self.spec.agents[i];
        let r = &attempt.response;
        let mut ledger = self.ledger.borrow_mut();
        let used = r.input_tokens + r.output_tokens;
        ledger.tokens += used;
        ledger.cost += r.cost_usd;
        ledger.largest_call = ledger.largest_call.max(used);
        ledger.calls.push(CallRecord {
            agent_id: agent.id.clone(),
            round_index: round,
            system_prompt: self.system_prompts[i].clone(),
            user_prompt: attempt.user_prompt.clone(),
            response_text: r.response_text.clone(),
            tool_calls: r.tool_calls.clone(),
            input_tokens: r.input_tokens,
            output_tokens: r.output_tokens,
            cost_usd: r.cost_usd,
            failure_flag: attempt.failed,
        });
    }

    /// Returns the agent's probability, or `None` if it was just excluded.
    fn invoke(&mut self, i: usize, round: u32, visible: Vec<VisibleMessage>) -> Result<Option<f64>, Stop> {
        let agent = &self.spec.agents[i];
        let request = AgentRequest {
            agent,
            task: self.task,
            system_prompt: self.system_prompts[i].clone(),
            user_prompt: render_user(self.task, round, &visible),
            visible,
            round,
            attempt: 0,
            seed: self.seed,
        };
        let outcome = invoke_with_policy(
            self.backend,
            request,
            &self.spec.failure,
            || self.guard_allows(),
            |a| self.record(i, round, a),
        );
        match outcome {
            Invocation::Success(out) => {
                let p = out.probability.expect("success carries a probability");
                self.latest[i] = Some((round, p, out.response_text));
                Ok(Some(p))
            }
            Invocation::Gated => Err(Stop::Guard),
            Invocation::Exhausted(_) => match self.spec.failure.on_exhaustion {
                ExhaustionAction::Fallback => Err(Stop::Fallback),
                ExhaustionAction::Abort => Err(Stop::Abort),
                ExhaustionAction::Exclude => {
                    self.excluded[i] = true;
                    let id = agent.id.as_str();
                    let holds_final = self.spec.authority.final_agent() == Some(id)
                        || self.spec.aggregation.selector.as_deref() == Some(id);
                    if holds_final || self.active().next().is_none() {
                        Err(Stop::Fallback)
                    } else {
                        Ok(None)
                    }
                }
            },
        }
    }

    fn round_based(&mut self, round: u32) -> Result<(), Stop> {
        let graph = self.spec.topology.graph(round);
        let previous = self.latest.clone();
        for i in 0..self.spec.agents.len() {
            if self.excluded[i] {
                continue;
            }
            let visible = self.messages(&self.sources(graph, i), &previous);
            self.invoke(i, round, visible)?;
        }
        Ok(())
    }

    fn asynchronous(&mut self, round: u32) -> Result<(), Stop> {
        let graph = self.spec.topology.graph(round);
        for i in 0..self.spec.agents.len() {
            if self.excluded[i] {
                continue;
            }
            let visible = self.messages(&self.sources(graph, i), &self.latest);
            self.invoke(i, round, visible)?;
        }
        Ok(())
    }

    fn event_driven(&mut self, round: u32) -> Result<(), Stop> {
        let graph = self.spec.topology.graph(round);
        let n = self.spec.agents.len();
        let in_edges: Vec<Vec<usize>> = (0..n)
            .map(|i| self.sources(graph, i).into_iter().filter(|&j| j != i).collect())
            .collect();
        let final_agent = self.spec.authority.final_agent().and_then(|id| self.index(id));

        let mut initiators: Vec<usize> = match self.spec.authority.routing_agent().and_then(|id| self.index(id)) {
            Some(r) if !self.excluded[r] => vec![r],
            _ => self.active().filter(|&i| in_edges[i].is_empty()).collect(),
        };
        if initiators.is_empty() {
            initiators.extend(self.active().next());
        }
        let mut queue: VecDeque<(usize, bool)> = initiators.iter().map(|&i| (i, false)).collect();
        let mut queued = vec![false; n];
        for &i in &initiators {
            queued[i] = true;
        }
        let mut delivered = vec![vec![false; n]; n];
        let cap = n + graph.edges.len();
        let mut activations = 0;

        while let Some((i, on_receipt)) = queue.pop_front() {
            queued[i] = false;
            if self.excluded[i] || activations >= cap {
                continue;
            }
            activations += 1;
            let visible = self.messages(&self.sources(graph, i), &self.latest);
            delivered[i].iter_mut().for_each(|d| *d = false);
            let produced = self.invoke(i, round, visible)?;
            if produced.is_some() && on_receipt && Some(i) == final_agent {
                break;
            }
            for b in 0..n {
                if b == i || self.excluded[b] || !in_edges[b].contains(&i) {
                    continue;
                }
                if produced.is_some() {
                    delivered[b][i] = true;
                }
                let ready = in_edges[b].iter().all(|&j| self.excluded[j] || delivered[b][j]);
                if ready && !queued[b] && in_edges[b].iter().any(|&j| delivered[b][j]) {
                    queued[b] = true;
                    queue.push_back((b, true));
                }
            }
        }
        Ok(())
    }

    fn outputs(&self) -> Vec<(String, f64)> {
        self.active()
            .filter_map(|i| self.latest[i].as_ref().map(|(_, p, _)| (self.spec.agents[i].id.clone(), *p)))
            .collect()
    }

    fn converged(&self, eps: f64) -> bool {
        let values: Vec<f64> = self.outputs().into_iter().map(|(_, p)| p).collect();
        if values.is_empty() {
            return false;
        }
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo <= eps
    }

    /// Final commitment from the outputs collected so far.
    fn commit(&self) -> Option<f64> {
        let outputs = self.outputs();
        match &self.spec.authority.final_commitment {
            Some(Authority::Agent(id)) => outputs
                .iter()
                .find(|(a, _)| a == id)
                .map(|(_, p)| *p)
                .or_else(|| self.spec.aggregation.apply(&outputs).ok()),
            Some(Authority::Aggregate(rule)) => rule.apply(&outputs).ok(),
            None => None,
        }
    }
}

/// Runs `spec` on `task`. Equal inputs give byte-identical traces.
pub fn run(
    spec: &CoordinationSpec,
    backend: &dyn AgentBackend,
    task: &MarketTask,
    seed: u64,
) -> Result<ExecutionTrace, RunError> {
    let report = spec.validate();
    if !report.is_ok() {
        return Err(RunError::InvalidSpec(report.to_string()));
    }
    let n = spec.agents.len();
    let mut runner = Runner {
        spec,
        backend,
        task,
        seed,
        system_prompts: spec.agents.iter().map(|a| render_system(&a.role_instruction)).collect(),
        latest: vec![None; n],
        excluded: vec![false; n],
        ledger: RefCell::new(Ledger::default()),
    };

    let mut terminated_by = TerminatedBy::Completed;
    let mut stop = None;
    for round in 1..=spec.termination.max_rounds {
        let result = match spec.sync {
            SyncRegime::RoundBased => runner.round_based(round),
            SyncRegime::EventDriven => runner.event_driven(round),
            SyncRegime::Asynchronous => runner.asynchronous(round),
        };
        if let Err(s) = result {
            stop = Some(s);
            break;
        }
        if let Some(eps) = spec.termination.convergence_tolerance {
            if runner.converged(eps) {
                terminated_by = TerminatedBy::Convergence;
                break;
            }
        }
    }

    let fallback = FinalProbability::Fallback(spec.failure.fallback_probability);
    let final_probability = match stop {
        None => runner.commit().map_or(fallback, FinalProbability::Value),
        Some(Stop::Guard) => {
            terminated_by = TerminatedBy::BudgetGuard;
            runner.commit().map_or(fallback, FinalProbability::Value)
        }
        Some(Stop::Fallback) => fallback,
        Some(Stop::Abort) => {
            terminated_by = TerminatedBy::Abort;
            FinalProbability::Missing
        }
    };
    let ledger = runner.ledger.into_inner();
    Ok(ExecutionTrace {
        spec_name: spec.name.clone(),
        market_id: task.market.id.clone(),
        calls: ledger.calls,
        final_probability,
        total_tokens: ledger.tokens,
        total_cost_usd: ledger.cost,
        terminated_by,
        seed,
    })
}

/// Per-agent call counts, for contract checks.
pub fn calls_per_agent(trace: &ExecutionTrace) -> BTreeMap<&str, usize> {
    let mut out = BTreeMap::new();
    for c in &trace.calls {
        *out.entry(c.agent_id.as_str()).or_insert(0) += 1;
    }
    out
}
