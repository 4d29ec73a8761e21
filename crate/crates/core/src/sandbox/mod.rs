//! Isolated, deterministic execution of test suites.
//!
//! Every execution gets a fresh temporary working directory holding
//! `class_under_test.py` (the assembled module) and `suite.py` (the suite
//! source, which imports from `class_under_test`). A [`Runner`] does the
//! actual execution: [`ProcessRunner`] speaks the JSON runner protocol to
//! an external shim, [`FakeRunner`] answers in-process for tests.

mod fake;
mod process;

pub use fake::{FakeInvocation, FakeRule, FakeRules, FakeRunner};
pub use process::ProcessRunner;

use crate::taskmodel::{ClassSource, ClassTask, TestSuiteRef, STUB_SIGNAL};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

pub const CLASS_MODULE_FILE: &str = "class_under_test.py";
pub const SUITE_MODULE_FILE: &str = "suite.py";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseStatus {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub status: CaseStatus,
    #[serde(default)]
    pub message: String,
    #[serde(default)]
    pub trace: String,
}

impl CaseResult {
    /// Error raised by an unimplemented stub rather than by test logic.
    pub fn is_stub_error(&self) -> bool {
        self.status == CaseStatus::Error
            && (self.message.contains(STUB_SIGNAL) || self.trace.contains(STUB_SIGNAL))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Clean,
    Timeout,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub suite_id: String,
    /// One entry per suite case, in suite order, for clean runs. Runs that
    /// timed out or crashed carry whatever was reported before.
    pub cases: Vec<CaseResult>,
    pub wall_time: f64,
    pub terminated: Termination,
}

impl TestOutcome {
    pub fn pass_count(&self) -> usize {
        self.cases
            .iter()
            .filter(|c| c.status == CaseStatus::Pass)
            .count()
    }

    pub fn all_pass(&self) -> bool {
        self.terminated == Termination::Clean
            && !self.cases.is_empty()
            && self.cases.iter().all(|c| c.status == CaseStatus::Pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| c.status != CaseStatus::Pass)
    }

    pub fn has_stub_errors(&self) -> bool {
        self.cases.iter().any(CaseResult::is_stub_error)
    }

    /// Per-case verdicts; what the determinism contract compares.
    pub fn verdicts(&self) -> Vec<(&str, CaseStatus)> {
        self.cases
            .iter()
            .map(|c| (c.name.as_str(), c.status))
            .collect()
    }
}

pub mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecLimits {
    /// Per-suite time limit.
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub seed: u64,
    /// Parent directory for per-execution working directories
    /// (system temp directory when unset).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scratch_root: Option<PathBuf>,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            seed: 0,
            scratch_root: None,
        }
    }
}

/// JSON request written to the runner's standard input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub suite_module: String,
    pub test_classes: Vec<String>,
    pub seed: u64,
    pub timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReply {
    pub results: Vec<CaseResult>,
    pub wall_time: f64,
    pub terminated: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shim_version: Option<String>,
}

/// Everything a runner needs for one suite execution.
#[derive(Debug, Clone)]
pub struct RunJob<'a> {
    pub workdir: &'a Path,
    pub request: &'a RunRequest,
    pub suite_id: &'a str,
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("failed to start runner: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("runner I/O failed: {0}")]
    Io(#[source] std::io::Error),
    #[error("runner exited with status {code}: {stderr}")]
    Fault { code: i32, stderr: String },
    #[error("runner reply is not a valid protocol document: {0}")]
    Protocol(String),
    #[error("{0}")]
    Other(String),
}

pub trait Runner: Send + Sync {
    fn execute(&self, job: &RunJob<'_>) -> Result<RunReply, RunnerError>;
}

impl<R: Runner + ?Sized> Runner for &R {
    fn execute(&self, job: &RunJob<'_>) -> Result<RunReply, RunnerError> {
        (**self).execute(job)
    }
}

impl<R: Runner + ?Sized> Runner for Box<R> {
    fn execute(&self, job: &RunJob<'_>) -> Result<RunReply, RunnerError> {
        (**self).execute(job)
    }
}

/// Failures of the execution infrastructure (never test failures).
#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("timeout must be positive")]
    InvalidLimits,
    #[error("working directory: {0}")]
    Workdir(#[source] std::io::Error),
    #[error("suite {suite_id}: {source}")]
    Runner {
        suite_id: String,
        #[source]
        source: RunnerError,
    },
}

/// Top-level class names defined in a suite source.
pub fn test_classes(suite_source: &str) -> Vec<String> {
    suite_source
        .lines()
        .filter_map(|l| l.strip_prefix("class "))
        .filter_map(|rest| {
            let end = rest.find(|c: char| !(c.is_alphanumeric() || c == '_'))?;
            (end > 0).then(|| rest[..end].to_string())
        })
        .collect()
}

fn case_matches(case: &str, reported: &str) -> bool {
    case == reported
        || reported.rsplit('.').next() == Some(case)
        || case.rsplit('.').next() == Some(reported)
}

fn normalize_outcome(suite: &TestSuiteRef, reply: RunReply) -> TestOutcome {
    let clean = reply.terminated == Termination::Clean;
    let mut cases = Vec::with_capacity(suite.case_names.len());
    for case in &suite.case_names {
        match reply.results.iter().find(|r| case_matches(case, &r.name)) {
            Some(r) => cases.push(CaseResult {
                name: case.clone(),
                ..r.clone()
            }),
            None if clean => cases.push(CaseResult {
                name: case.clone(),
                status: CaseStatus::Error,
                message: "case not reported by runner".to_string(),
                trace: String::new(),
            }),
            None => {}
        }
    }
    TestOutcome {
        suite_id: suite.suite_id.clone(),
        cases,
        wall_time: reply.wall_time,
        terminated: reply.terminated,
    }
}

/// Runs one suite against an assembled class in a fresh working directory.
/// The directory is removed before returning, whatever the outcome.
pub fn run_suite(
    class: &ClassSource,
    suite: &TestSuiteRef,
    limits: &ExecLimits,
    runner: &dyn Runner,
) -> Result<TestOutcome, SandboxError> {
    if limits.timeout.is_zero() {
        return Err(SandboxError::InvalidLimits);
    }
    let mut builder = tempfile::Builder::new();
    builder.prefix("tdd-sandbox-");
    let dir = match &limits.scratch_root {
        Some(root) => builder.tempdir_in(root),
        None => builder.tempdir(),
    }
    .map_err(SandboxError::Workdir)?;

    std::fs::write(dir.path().join(CLASS_MODULE_FILE), class.module_source())
        .map_err(SandboxError::Workdir)?;
    std::fs::write(dir.path().join(SUITE_MODULE_FILE), &suite.source)
        .map_err(SandboxError::Workdir)?;
    let request = RunRequest {
        suite_module: SUITE_MODULE_FILE.to_string(),
        test_classes: test_classes(&suite.source),
        seed: limits.seed,
        timeout: limits.timeout.as_secs_f64(),
    };
    let started = Instant::now();
    let reply = runner.execute(&RunJob {
        workdir: dir.path(),
        request: &request,
        suite_id: &suite.suite_id,
    });
    let elapsed = started.elapsed().as_secs_f64();
    if let Err(e) = dir.close() {
        log::warn!("failed to remove sandbox directory: {e}");
    }
    let mut reply = reply.map_err(|source| SandboxError::Runner {
        suite_id: suite.suite_id.clone(),
        source,
    })?;
    if reply.wall_time <= 0.0 {
        reply.wall_time = elapsed;
    }
    Ok(normalize_outcome(suite, reply))
}

/// Runs every method-level private suite and the class-level suite, each
/// in its own working directory. Keyed by suite id.
pub fn run_private_evaluation(
    task: &ClassTask,
    final_class: &ClassSource,
    limits: &ExecLimits,
    runner: &dyn Runner,
) -> Result<BTreeMap<String, TestOutcome>, SandboxError> {
    task.private_suites()
        .map(|suite| {
            Ok((
                suite.suite_id.clone(),
                run_suite(final_class, suite, limits, runner)?,
            ))
        })
        .collect()
}
