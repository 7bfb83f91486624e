use coordlab::agents::prompt::{COMMON_SYSTEM_HEADER, OUTPUT_FORMAT, TOOL_REMINDER};
use coordlab::agents::synthetic::{SyntheticAgentParams, SyntheticBackend};
use coordlab::agents::MarketTask;
use coordlab::engine::{calls_per_agent, run, FinalProbability, TerminatedBy};
use coordlab::fixture::{Category, Market, Outcome, Tick};
use coordlab::reference::{build_reference, ConfigParams, REFERENCE_NAMES};
use coordlab::spec::{ExhaustionAction, SyncRegime};

const DAY: i64 = 86_400;

fn market(id: &str, q: f64, outcome: Outcome) -> Market {
    let resolved_at = 1_770_000_000;
    Market {
        id: id.into(),
        question: format!("Will event {id} happen?"),
        category: Category::Politics,
        resolved_at,
        outcome: Some(outcome),
        volume_usd: 120_000.0,
        event_group_id: None,
        disputed: false,
        ticks: (0..30)
            .map(|k| Tick::new(resolved_at - (40 - k) * DAY, q))
            .collect(),
    }
}

fn task(q: f64) -> MarketTask {
    MarketTask::new(market("mk-1", q, Outcome::Yes)).unwrap()
}

fn spec(name: &str) -> coordlab::spec::CoordinationSpec {
    build_reference(name, &ConfigParams::default()).unwrap()
}

#[test]
fn call_counts_without_failures() {
    let backend = SyntheticBackend::default();
    let t = task(0.35);
    let count = |name: &str| run(&spec(name), &backend, &t, 7).unwrap().calls.len();
    assert_eq!(count("independent_ensemble"), 3);
    assert_eq!(count("peer_critique_debate"), 6);
    assert_eq!(count("sequential_pipeline"), 3);
    assert_eq!(count("orchestrator_specialist"), 5);
    let consensus = count("consensus_alignment");
    assert!((3..=9).contains(&consensus), "{consensus}");
}

#[test]
fn pipeline_and_orchestrator_order() {
    let backend = SyntheticBackend::default();
    let t = task(0.35);
    let trace = run(&spec("sequential_pipeline"), &backend, &t, 1).unwrap();
    let order: Vec<_> = trace.calls.iter().map(|c| c.agent_id.as_str()).collect();
    assert_eq!(order, ["research", "analysis", "forecast"]);
    assert!(trace.calls[2].user_prompt.contains(&trace.calls[1].response_text));
    assert!(!trace.calls[2].user_prompt.contains(&trace.calls[0].response_text));

    let trace = run(&spec("orchestrator_specialist"), &backend, &t, 1).unwrap();
    let order: Vec<_> = trace.calls.iter().map(|c| c.agent_id.as_str()).collect();
    assert_eq!(order, ["planner", "specialist_1", "specialist_2", "specialist_3", "planner"]);
    // Specialists see the planner but not each other.
    assert!(trace.calls[2].user_prompt.contains(&trace.calls[0].response_text));
    assert!(!trace.calls[2].user_prompt.contains("--- specialist_1"));
    let last = &trace.calls[4].user_prompt;
    for k in 1..=3 {
        assert!(last.contains(&format!("--- specialist_{k}")));
    }
    let p = trace.final_probability.probability().unwrap();
    assert!(trace.calls[4].response_text.contains(&format!("{p:.4}")));
}

#[test]
fn consensus_at_common_start_converges_in_one_round() {
    let backend = SyntheticBackend::new(SyntheticAgentParams {
        truth_tilt: 0.0,
        noise_sd: 0.0,
        ..Default::default()
    });
    let trace = run(&spec("consensus_alignment"), &backend, &task(0.5), 3).unwrap();
    assert_eq!(trace.terminated_by, TerminatedBy::Convergence);
    assert_eq!(trace.calls.len(), 3);
    assert_eq!(trace.final_probability, FinalProbability::Value(0.5));
}

#[test]
fn budget_guard_stops_before_third_call() {
    let backend = SyntheticBackend::new(SyntheticAgentParams {
        tokens_per_call: 1500,
        input_tokens: Some(3500),
        ..Default::default()
    });
    for name in ["independent_ensemble", "peer_critique_debate"] {
        let trace = run(&spec(name), &backend, &task(0.4), 9).unwrap();
        assert_eq!(trace.calls.len(), 2, "{name}");
        assert_eq!(trace.terminated_by, TerminatedBy::BudgetGuard);
        assert_eq!(trace.total_tokens, 10_000);
        // Partial outputs are still pooled under the spec's rule.
        assert!(matches!(trace.final_probability, FinalProbability::Value(_)));
        trace.check_invariants().unwrap();
    }
}

#[test]
fn guard_slack_is_at_most_one_call() {
    for guard in [1_000, 2_500, 4_000, 7_777, 12_000] {
        let mut s = spec("peer_critique_debate");
        s.termination.budget_guard_tokens = guard;
        let backend = SyntheticBackend::default();
        let trace = run(&s, &backend, &task(0.6), 2).unwrap();
        let largest = trace.calls.iter().map(|c| c.input_tokens + c.output_tokens).max().unwrap();
        assert!(trace.total_tokens <= guard + largest);
        let fired = trace.calls.len() < 6;
        assert_eq!(fired, trace.terminated_by == TerminatedBy::BudgetGuard, "guard {guard}");
    }
}

#[test]
fn deterministic_bytes() {
    let backend = SyntheticBackend::default();
    let t = task(0.42);
    for name in REFERENCE_NAMES {
        let a = run(&spec(name), &backend, &t, 11).unwrap().to_json_line();
        let b = run(&spec(name), &backend, &t, 11).unwrap().to_json_line();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn system_prompts_differ_only_in_role() {
    let backend = SyntheticBackend::default();
    let t = task(0.42);
    for name in REFERENCE_NAMES {
        let s = spec(name);
        let trace = run(&s, &backend, &t, 11).unwrap();
        for call in &trace.calls {
            let role = &s.agent(&call.agent_id).unwrap().role_instruction;
            let stripped = call.system_prompt.replacen(role.as_str(), "<ROLE>", 1);
            assert_eq!(
                stripped,
                format!("{COMMON_SYSTEM_HEADER}\n\n## Role\n<ROLE>\n\n## Tools\n{TOOL_REMINDER}\n\n## Output\n{OUTPUT_FORMAT}")
            );
        }
    }
}

#[test]
fn tool_stack_is_identical_across_specs() {
    let backend = SyntheticBackend::default();
    let t = task(0.42);
    let mut seen = std::collections::BTreeSet::new();
    for name in REFERENCE_NAMES {
        for call in run(&spec(name), &backend, &t, 4).unwrap().calls {
            for tc in call.tool_calls {
                seen.insert((tc.name, tc.output_sha256));
            }
        }
    }
    // One distinct output per tool across every spec and agent.
    assert_eq!(seen.len(), 2);
}

#[test]
fn exhausted_retries_fall_back() {
    let backend = SyntheticBackend::new(SyntheticAgentParams {
        malformed_rate: 1.0,
        ..Default::default()
    });
    let trace = run(&spec("independent_ensemble"), &backend, &task(0.3), 1).unwrap();
    assert_eq!(trace.final_probability, FinalProbability::Fallback(0.5));
    assert_eq!(trace.terminated_by, TerminatedBy::Completed);
    assert_eq!(trace.calls.len(), 3);
    assert!(trace.calls.iter().all(|c| c.failure_flag));
    assert!(trace.calls[1].user_prompt.contains("did not contain a valid forecast block"));
    trace.check_invariants().unwrap();
    let line = trace.to_json_line();
    assert!(line.contains("\"final_probability\":{\"fallback\":0.5}"));
}

#[test]
fn exclude_and_abort_policies() {
    let backend = SyntheticBackend::new(SyntheticAgentParams {
        malformed_rate: 1.0,
        ..Default::default()
    });
    let mut s = spec("independent_ensemble");
    s.failure.on_exhaustion = ExhaustionAction::Abort;
    let trace = run(&s, &backend, &task(0.3), 1).unwrap();
    assert_eq!(trace.terminated_by, TerminatedBy::Abort);
    assert_eq!(trace.final_probability, FinalProbability::Missing);
    trace.check_invariants().unwrap();

    s.failure.on_exhaustion = ExhaustionAction::Exclude;
    let trace = run(&s, &backend, &task(0.3), 1).unwrap();
    // Every agent is excluded in turn, then the run falls back.
    assert_eq!(trace.calls.len(), 9);
    assert_eq!(trace.final_probability, FinalProbability::Fallback(0.5));
}

#[test]
fn transient_failures_are_retried() {
    let backend = SyntheticBackend::new(SyntheticAgentParams {
        transport_failure_rate: 0.3,
        ..Default::default()
    });
    let mut retried = 0;
    for seed in 0..40 {
        let trace = run(&spec("independent_ensemble"), &backend, &task(0.3), seed).unwrap();
        trace.check_invariants().unwrap();
        retried += usize::from(trace.calls.len() > 3);
        let per_agent = calls_per_agent(&trace);
        assert!(per_agent.values().all(|&n| n <= 3));
    }
    assert!(retried > 0);
}

#[test]
fn invalid_spec_is_refused() {
    let mut s = spec("independent_ensemble");
    s.agents.clear();
    assert!(run(&s, &SyntheticBackend::default(), &task(0.3), 0).is_err());
}

#[test]
fn asynchronous_regime_runs() {
    let mut s = spec("sequential_pipeline");
    s.sync = SyncRegime::Asynchronous;
    let trace = run(&s, &SyntheticBackend::default(), &task(0.3), 0).unwrap();
    assert_eq!(trace.calls.len(), 3);
    assert!(trace.calls[2].user_prompt.contains(&trace.calls[1].response_text));
}
