use super::*;
use crate::prompting::{BackendTarget, MockBackend, MockEntry, RecordingBackend, REFLECTION_STEPS};
use crate::sandbox::{FakeRule, FakeRules, FakeRunner};
use crate::taskmodel::fixtures::timer_task;
use std::collections::HashMap;

const DEPS: &str = r#"{"dep_map": {"start": [], "stop": [], "restart": ["stop", "start"]}, "order": ["start", "stop", "restart"]}"#;

fn good(m: &str) -> String {
    format!("```python\ndef {m}(self):\n    return '{m}-ok'\n```")
}

fn bad(m: &str) -> String {
    format!("Reflection for {m}.\n```python\ndef {m}(self):\n    return '{m}-bad'\n```")
}

fn rules() -> FakeRules {
    FakeRules {
        rules: ["start", "stop", "restart"]
            .iter()
            .map(|m| FakeRule {
                suite_id: format!("TimerTest_{m}"),
                pass_if_contains: vec![format!("'{m}-ok'")],
                requires_implemented: vec![],
                fail_message: Some(format!("AssertionError: {m} wrong")),
            })
            .collect(),
        default_pass: true,
    }
}

fn mock(entries: &[(&str, MockEntry)]) -> RecordingBackend<MockBackend> {
    let map: HashMap<String, MockEntry> = entries
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    RecordingBackend::new(MockBackend::new(map))
}

fn one(s: &str) -> MockEntry {
    MockEntry::One(s.to_string())
}

fn config(strategy: Strategy) -> RunConfig {
    RunConfig::new(
        strategy,
        BackendConfig::new(BackendTarget::parse("mock:unused.json"), "mock"),
    )
}

fn all_good() -> Vec<(&'static str, MockEntry)> {
    vec![
        ("Timer_1/*/deps/0", one(DEPS)),
        ("Timer_1/start/generate/0", one(&good("start"))),
        ("Timer_1/stop/generate/0", one(&good("stop"))),
        ("Timer_1/restart/generate/0", one(&good("restart"))),
    ]
}

#[test]
fn all_correct_first_try() {
    let backend = mock(&all_good());
    let runner = FakeRunner::from_rules(rules());
    let cfg = config(Strategy::Tdd);
    let trace = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    assert!(trace.aborted.is_none());
    assert_eq!(trace.schedule_used, ["start", "stop", "restart"]);
    assert!(trace
        .methods
        .iter()
        .all(|m| m.status == MethodStatus::Accepted && m.attempts.len() == 1));
    assert_eq!(trace.repair_rounds_per_method.values().sum::<u32>(), 0);
    let class = trace.final_class_source.unwrap();
    assert!(class.class_text.contains("'restart-ok'"));
    assert!(!class.class_text.contains(crate::taskmodel::STUB_SIGNAL));
}

#[test]
fn fail_fail_pass_costs_two_rounds() {
    let mut script = all_good();
    script[2] = ("Timer_1/stop/generate/0", one(&bad("stop")));
    script.push(("Timer_1/stop/repair/1", one(&bad("stop"))));
    script.push(("Timer_1/stop/repair/2", one(&good("stop"))));
    let backend = mock(&script);
    let runner = FakeRunner::from_rules(rules());
    let cfg = config(Strategy::Tdd);
    let trace = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    let stop = trace.method("stop").unwrap();
    assert_eq!(stop.status, MethodStatus::Accepted);
    assert_eq!(stop.repair_rounds(), 2);
    assert_eq!(trace.repair_rounds_per_method["stop"], 2);
    assert_eq!(trace.repair_rounds_per_method["start"], 0);
    assert_eq!(trace.repair_rounds_per_method["restart"], 0);
    assert_eq!(
        stop.attempts[1].reflection.as_deref(),
        Some("Reflection for stop.")
    );
    // the second repair prompt threads the first reflection
    let calls = backend.calls();
    let second_repair = calls
        .iter()
        .find(|(b, _)| b.key.to_string() == "Timer_1/stop/repair/2")
        .unwrap();
    assert!(second_repair.0.body.contains("Reflection for stop."));
    assert!(second_repair.0.body.contains(REFLECTION_STEPS));
}

#[test]
fn always_failing_method_is_exhausted_within_budget() {
    let mut script = all_good();
    script[1] = ("Timer_1/start/generate/0", one(&bad("start")));
    for r in 1..=3 {
        script.push((
            Box::leak(format!("Timer_1/start/repair/{r}").into_boxed_str()),
            one(&bad("start")),
        ));
    }
    let backend = mock(&script);
    let runner = FakeRunner::from_rules(rules());
    let cfg = config(Strategy::Tdd);
    let trace = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    let start = trace.method("start").unwrap();
    assert_eq!(start.attempts.len(), 4);
    assert_eq!(start.status, MethodStatus::Exhausted);
    // exhausted methods keep their last body
    assert!(trace
        .final_class_source
        .unwrap()
        .class_text
        .contains("'start-bad'"));
}

#[test]
fn zero_budget_stops_after_initial_attempt() {
    let mut script = all_good();
    script[1] = ("Timer_1/start/generate/0", one(&bad("start")));
    let backend = mock(&script);
    let runner = FakeRunner::from_rules(rules());
    let mut cfg = config(Strategy::Tdd);
    cfg.repair_budget = 0;
    let trace = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    let start = trace.method("start").unwrap();
    assert_eq!(start.attempts.len(), 1);
    assert_eq!(start.status, MethodStatus::Exhausted);
}

#[test]
fn no_reflection_prompts_keep_traces_but_drop_steps() {
    let mut script = all_good();
    script[1] = ("Timer_1/start/generate/0", one(&bad("start")));
    script.push(("Timer_1/start/repair/1", one(&good("start"))));
    let backend = mock(&script);
    let runner = FakeRunner::from_rules(rules());
    let mut cfg = config(Strategy::Tdd);
    cfg.reflection_enabled = false;
    let trace = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    assert!(trace.method("start").unwrap().attempts[1]
        .reflection
        .is_none());
    let calls = backend.calls();
    let repair = &calls
        .iter()
        .find(|(b, _)| b.key.kind == prompting::PromptKind::Repair)
        .unwrap()
        .0;
    assert!(repair.body.contains("AssertionError: start wrong"));
    assert!(repair.body.contains("Traceback"));
    assert!(!repair.body.contains("Failure analysis"));
}

#[test]
fn extraction_failure_consumes_a_round() {
    let mut script = all_good();
    script[1] = ("Timer_1/start/generate/0", one("I cannot do that."));
    script.push(("Timer_1/start/repair/1", one(&good("start"))));
    let backend = mock(&script);
    let runner = FakeRunner::from_rules(rules());
    let cfg = config(Strategy::Tdd);
    let trace = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    let start = trace.method("start").unwrap();
    assert!(start.attempts[0].outcome.is_none());
    assert!(start.attempts[0].extraction_error.is_some());
    assert_eq!(start.repair_rounds(), 1);
    assert_eq!(start.status, MethodStatus::Accepted);
}

#[test]
fn partial_class_grows_with_schedule() {
    let backend = mock(&all_good());
    let runner = FakeRunner::from_rules(rules());
    let cfg = config(Strategy::Tdd);
    Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    let prompts: Vec<_> = backend
        .calls()
        .into_iter()
        .filter(|(b, _)| b.key.kind == prompting::PromptKind::Generate)
        .collect();
    assert!(!prompts[0].0.body.contains("-ok'"));
    assert!(prompts[1].0.body.contains("'start-ok'") && !prompts[1].0.body.contains("'stop-ok'"));
    assert!(prompts[2].0.body.contains("'start-ok'") && prompts[2].0.body.contains("'stop-ok'"));
}

#[test]
fn invalid_analysis_is_retried_then_falls_back() {
    let mut script = all_good();
    script[0] = ("Timer_1/*/deps/0", one(r#"{"dep_map": {}, "order": []}"#));
    script.push(("Timer_1/*/deps/1", one("still not json")));
    let backend = mock(&script);
    let runner = FakeRunner::from_rules(rules());
    let cfg = config(Strategy::Tdd);
    let trace = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    assert!(trace.is_fallback());
    assert_eq!(trace.dep_analysis.as_ref().unwrap().attempts.len(), 2);
    assert_eq!(trace.schedule_used, ["start", "stop", "restart"]);
    let retry = &backend.calls()[1].0;
    assert!(retry.body.contains("dep_map is missing method 'start'"));
}

#[test]
fn repair_order_reorders_topologically() {
    let mut script = all_good();
    script[0] = (
        "Timer_1/*/deps/0",
        one(
            r#"{"dep_map": {"start": [], "stop": [], "restart": ["stop"]}, "order": ["restart", "stop", "start"]}"#,
        ),
    );
    let backend = mock(&script);
    let runner = FakeRunner::from_rules(rules());
    let mut cfg = config(Strategy::Tdd);
    let kept = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    assert_eq!(kept.schedule_used, ["restart", "stop", "start"]);
    cfg.keep_predicted_order = false;
    let backend = mock(&script);
    let fixed = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    assert_eq!(fixed.schedule_used, ["start", "stop", "restart"]);
}

#[test]
fn backend_failure_aborts_with_marker() {
    let backend = mock(&all_good()[..2]);
    let runner = FakeRunner::from_rules(rules());
    let cfg = config(Strategy::Tdd);
    let trace = Pipeline::new(&cfg, &backend, &runner).generate_class_tdd(&timer_task());
    assert!(trace
        .aborted
        .as_deref()
        .unwrap()
        .contains("Timer_1/stop/generate/0"));
    assert_eq!(
        trace.method("start").unwrap().status,
        MethodStatus::Accepted
    );
    assert_eq!(
        trace.method("stop").unwrap().status,
        MethodStatus::Incomplete
    );
}

#[test]
fn holistic_makes_one_call() {
    let class = "```python\nclass Timer:\n    def start(self):\n        return 'start-ok'\n    def stop(self):\n        return 'stop-ok'\n```";
    let backend = mock(&[("Timer_1/*/holistic/0", one(class))]);
    let runner = FakeRunner::from_rules(rules());
    let cfg = config(Strategy::Holistic);
    let trace = Pipeline::new(&cfg, &backend, &runner).run(&timer_task());
    assert_eq!(backend.calls().len(), 1);
    assert_eq!(trace.backend_calls(), 1);
    let text = trace.final_class_source.unwrap().class_text;
    assert!(text.contains("'stop-ok'"));
    assert!(text.contains(&format!("{}: restart", crate::taskmodel::STUB_SIGNAL)));
    assert!(runner.invocations().is_empty());
}

#[test]
fn incremental_and_compositional_contexts() {
    let script = all_good();
    let runner = FakeRunner::from_rules(rules());
    let backend = mock(&script);
    let cfg = config(Strategy::Incremental);
    let trace = Pipeline::new(&cfg, &backend, &runner).run(&timer_task());
    assert!(trace
        .methods
        .iter()
        .all(|m| m.attempts.len() == 1 && m.attempts[0].outcome.is_none()));
    let calls = backend.calls();
    assert!(calls[2].0.body.contains("'start-ok'") && calls[2].0.body.contains("'stop-ok'"));

    let backend = mock(&script);
    let cfg = config(Strategy::Compositional);
    let trace = Pipeline::new(&cfg, &backend, &runner).run(&timer_task());
    for (b, _) in backend.calls() {
        assert!(!b.body.contains("-ok'"));
        assert!(!b.body.contains("TimerTest_"));
    }
    assert!(trace
        .final_class_source
        .unwrap()
        .class_text
        .contains("'restart-ok'"));
    assert!(runner.invocations().is_empty());
}

#[test]
fn traces_round_trip_through_jsonl() {
    let backend = mock(&all_good());
    let runner = FakeRunner::from_rules(rules());
    let cfg = config(Strategy::Tdd);
    let runs = run_tasks(&[timer_task(), timer_task()], &cfg, &backend, &runner, 2);
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].outcomes.suites.len(), 4);
    let traces: Vec<_> = runs.into_iter().map(|r| r.trace).collect();
    let mut buf = Vec::new();
    write_traces(&mut buf, &traces).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(read_traces(&text).unwrap(), traces);
}
