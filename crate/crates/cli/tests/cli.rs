use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn harness(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdd-harness"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_mini(out: &Path, extra: &[&str]) -> Output {
    let corpus = fixture("mini_corpus.json");
    let backend = format!("mock:{}", fixture("mini_mock.json").display());
    let runner = format!("fake:{}", fixture("mini_fake_rules.json").display());
    let mut args = vec![
        "run",
        "--corpus",
        corpus.to_str().unwrap(),
        "--backend",
        &backend,
        "--runner",
        &runner,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    harness(&args)
}

fn traces(out: &Path) -> Vec<Value> {
    std::fs::read_to_string(out.join("traces.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_mini(dir.path(), &["--parallel", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "run.json",
        "traces.jsonl",
        "outcomes.json",
        "report.json",
        "report.txt",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    assert_eq!(traces(dir.path()).len(), 5);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let gen = &report["reports"][0]["generation"];
    assert_eq!(gen["class_success"], 100.0);
    assert_eq!(report["config"]["run"]["repair_budget"], 3);
    assert!(stdout(&o).contains("Class Success"));
}

#[test]
fn holistic_makes_one_attempt_per_task() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_mini(dir.path(), &["--strategy", "holistic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for t in traces(dir.path()) {
        assert!(t["class_attempt"].is_object());
        assert!(t.get("dep_analysis").is_none());
        for m in t["methods"].as_array().unwrap() {
            assert!(m["attempts"].as_array().unwrap().is_empty());
        }
    }
}

#[test]
fn all_strategies_produce_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_mini(
        dir.path(),
        &["--strategy", "compositional,tdd,holistic,incremental"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let strategies: Vec<&str> = report["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["strategy"].as_str().unwrap())
        .collect();
    assert_eq!(
        strategies,
        ["tdd", "holistic", "incremental", "compositional"]
    );
    assert!(report["comparison"].is_array());
    assert_eq!(traces(dir.path()).len(), 20);
}

#[test]
fn no_reflection_and_budget_reach_the_loop() {
    // add's public suite never passes, so it spends the whole budget
    let dir = tempfile::tempdir().unwrap();
    let mut script: BTreeMap<String, Value> =
        serde_json::from_str(&std::fs::read_to_string(fixture("mini_mock.json")).unwrap()).unwrap();
    let body = script["Calculator_7/add/generate/0"].clone();
    for r in 1..=2 {
        script.insert(format!("Calculator_7/add/repair/{r}"), body.clone());
    }
    let mock = dir.path().join("mock.json");
    std::fs::write(&mock, serde_json::to_string(&script).unwrap()).unwrap();
    let mut rules: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("mini_fake_rules.json")).unwrap())
            .unwrap();
    for r in rules["rules"].as_array_mut().unwrap() {
        if r["suite_id"] == "CalculatorTestAdd" {
            r["pass_if_contains"] = serde_json::json!(["no such text"]);
        }
    }
    let rules_path = dir.path().join("rules.json");
    std::fs::write(&rules_path, rules.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = harness(&[
        "run",
        "--corpus",
        fixture("mini_corpus.json").to_str().unwrap(),
        "--tasks",
        "Calc*",
        "--backend",
        &format!("mock:{}", mock.display()),
        "--runner",
        &format!("fake:{}", rules_path.display()),
        "--no-reflection",
        "--repair-budget",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["run"]["reflection_enabled"], false);
    let t = &traces(&out)[0];
    let add = t["methods"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["name"] == "add")
        .unwrap();
    assert_eq!(add["status"], "exhausted");
    let attempts = add["attempts"].as_array().unwrap();
    assert_eq!(attempts.len(), 3);
    assert!(attempts.iter().all(|a| a.get("reflection").is_none()));
    assert_eq!(t["repair_rounds_per_method"]["add"], 2);
}

#[test]
fn report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_mini(dir.path(), &["--strategy", "tdd,holistic"])
        .status
        .success());
    let json = std::fs::read(dir.path().join("report.json")).unwrap();
    let txt = std::fs::read(dir.path().join("report.txt")).unwrap();
    let o = harness(&["report", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(dir.path().join("report.json")).unwrap(), json);
    assert_eq!(std::fs::read(dir.path().join("report.txt")).unwrap(), txt);
}

#[test]
fn report_without_traces_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = harness(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

fn write_model_order_inputs(dir: &Path, model: &str) -> (PathBuf, PathBuf) {
    let fx: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("model_orders.json")).unwrap())
            .unwrap();
    let graphs = dir.join("graphs.json");
    std::fs::write(&graphs, fx["graphs"].to_string()).unwrap();
    let orders: BTreeMap<String, Value> = fx["models"][model]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                r["task_id"].as_str().unwrap().to_string(),
                r["order"].clone(),
            )
        })
        .collect();
    let orders_path = dir.join("orders.json");
    std::fs::write(&orders_path, serde_json::to_string(&orders).unwrap()).unwrap();
    (graphs, orders_path)
}

#[test]
fn depcheck_lists_violating_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let (graphs, orders) = write_model_order_inputs(dir.path(), "gemini3-flash");
    let o = harness(&[
        "depcheck",
        "--graphs",
        graphs.to_str().unwrap(),
        "--orders",
        orders.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(
        text.contains("ClassEval_44")
            && text.contains("extract_code_from_html_text -> format_line_html_text")
    );
    assert!(text.contains("ClassEval_61") && text.contains("ClassEval_94"));
    assert!(text.contains("3 of 3 tasks violate"));
}

#[test]
fn depcheck_accepts_valid_orders() {
    let dir = tempfile::tempdir().unwrap();
    let script: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(fixture("mini_mock.json")).unwrap()).unwrap();
    let orders: BTreeMap<String, Value> = script
        .iter()
        .filter_map(|(k, v)| {
            let task = k.strip_suffix("/*/deps/0")?;
            let json = v.split("```json\n").nth(1)?.split("\n```").next()?;
            let parsed: Value = serde_json::from_str(json).ok()?;
            Some((task.to_string(), parsed["order"].clone()))
        })
        .collect();
    assert_eq!(orders.len(), 5);
    let path = dir.path().join("orders.json");
    std::fs::write(&path, serde_json::to_string(&orders).unwrap()).unwrap();
    let o = harness(&[
        "depcheck",
        "--corpus",
        fixture("mini_corpus.json").to_str().unwrap(),
        "--orders",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 of 5 tasks violate"));

    // the predicted schedules recorded in traces are checked the same way
    let out = dir.path().join("out");
    assert!(run_mini(&out, &[]).status.success());
    let o = harness(&[
        "depcheck",
        "--corpus",
        fixture("mini_corpus.json").to_str().unwrap(),
        "--traces",
        out.join("traces.jsonl").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn bad_usage_exits_2() {
    let corpus = fixture("mini_corpus.json");
    let c = corpus.to_str().unwrap();
    let cases: [&[&str]; 4] = [
        &[
            "run",
            "--corpus",
            c,
            "--backend",
            "mock:x.json",
            "--strategy",
            "greedy",
        ],
        &[
            "run",
            "--corpus",
            c,
            "--backend",
            "mock:x.json",
            "--tasks",
            "Nothing*",
        ],
        &[
            "run",
            "--corpus",
            c,
            "--backend",
            "mock:x.json",
            "--keep-order",
            "--repair-order",
        ],
        &["run", "--bogus"],
    ];
    for args in cases {
        let o = harness(args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn validate_reports_shape() {
    let o = harness(&[
        "validate",
        "--corpus",
        fixture("mini_corpus.json").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("5 tasks, 19 target methods"));
}
