#![allow(dead_code)]

use std::path::PathBuf;
use tdd_harness::prompting::{BackendConfig, BackendTarget, MockBackend};
use tdd_harness::sandbox::{FakeRules, FakeRunner};
use tdd_harness::taskmodel::{load_benchmark, ClassTask};
use tdd_harness::tddloop::{RunConfig, Strategy};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn mini_corpus() -> Vec<ClassTask> {
    load_benchmark(fixture("mini_corpus.json")).expect("mini corpus loads")
}

pub fn mini_mock() -> MockBackend {
    MockBackend::load(&fixture("mini_mock.json")).expect("mock script loads")
}

pub fn mini_rules_runner() -> FakeRunner {
    let text = std::fs::read_to_string(fixture("mini_fake_rules.json")).unwrap();
    let rules: FakeRules = serde_json::from_str(&text).unwrap();
    FakeRunner::from_rules(rules)
}

pub fn config(strategy: Strategy) -> RunConfig {
    RunConfig::new(
        strategy,
        BackendConfig::new(
            BackendTarget::Mock {
                script: fixture("mini_mock.json"),
            },
            "mock",
        ),
    )
}

/// Body lines of a `def` block, trimmed, without the signature and decorators.
pub fn body_lines(def: &str) -> Vec<String> {
    def.lines()
        .skip_while(|l| !l.trim_start().starts_with("def "))
        .skip(1)
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn python3_available() -> bool {
    std::process::Command::new("python3")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}
