use super::{
    CaseResult, CaseStatus, RunJob, RunReply, RunRequest, Runner, RunnerError, Termination,
};
use super::{CLASS_MODULE_FILE, SUITE_MODULE_FILE};
use crate::taskmodel::STUB_SIGNAL;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Mutex;

/// What an in-process fake sees for one execution. The sources are read
/// back from the working directory the sandbox prepared.
#[derive(Debug, Clone)]
pub struct FakeInvocation {
    pub workdir: PathBuf,
    pub suite_id: String,
    pub request: RunRequest,
    pub module_source: String,
    pub suite_source: String,
}

impl FakeInvocation {
    /// Test method names defined in the suite source.
    pub fn case_names(&self) -> Vec<String> {
        self.suite_source
            .lines()
            .filter_map(|l| l.trim_start().strip_prefix("def "))
            .filter(|rest| rest.starts_with("test"))
            .filter_map(|rest| rest.split('(').next())
            .map(str::to_string)
            .collect()
    }

    /// True when `method` is still an unimplemented stub in the module.
    pub fn is_stubbed(&self, method: &str) -> bool {
        self.module_source
            .contains(&format!("{STUB_SIGNAL}: {method}\""))
    }

    pub fn reply_all(&self, status: CaseStatus, message: &str) -> RunReply {
        RunReply {
            results: self
                .case_names()
                .into_iter()
                .map(|name| CaseResult {
                    name,
                    status,
                    message: message.to_string(),
                    trace: if status == CaseStatus::Pass {
                        String::new()
                    } else {
                        format!(
                            "Traceback (most recent call last):\n  File \"suite.py\"\n{message}"
                        )
                    },
                })
                .collect(),
            wall_time: 0.001,
            terminated: Termination::Clean,
            shim_version: Some("fake".to_string()),
        }
    }
}

/// Declarative fake behaviour, loadable from JSON.
///
/// For a suite with a matching rule: if any `requires_implemented` method
/// is still a stub, every case errors with the stub signal; otherwise all
/// cases pass when every `pass_if_contains` snippet occurs in the module
/// source, and fail with `fail_message` when one is missing. Suites
/// without a rule get `default_pass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FakeRules {
    #[serde(default)]
    pub rules: Vec<FakeRule>,
    #[serde(default = "default_true")]
    pub default_pass: bool,
}

fn default_true() -> bool {
    true
}

impl Default for FakeRules {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            default_pass: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FakeRule {
    pub suite_id: String,
    #[serde(default)]
    pub pass_if_contains: Vec<String>,
    #[serde(default)]
    pub requires_implemented: Vec<String>,
    #[serde(default)]
    pub fail_message: Option<String>,
}

impl FakeRules {
    pub fn evaluate(&self, inv: &FakeInvocation) -> RunReply {
        let Some(rule) = self.rules.iter().find(|r| r.suite_id == inv.suite_id) else {
            return if self.default_pass {
                inv.reply_all(CaseStatus::Pass, "")
            } else {
                inv.reply_all(CaseStatus::Fail, "AssertionError: no rule for suite")
            };
        };
        if let Some(stub) = rule.requires_implemented.iter().find(|m| inv.is_stubbed(m)) {
            return inv.reply_all(
                CaseStatus::Error,
                &format!("NotImplementedError: {STUB_SIGNAL}: {stub}"),
            );
        }
        if rule
            .pass_if_contains
            .iter()
            .all(|s| inv.module_source.contains(s.as_str()))
        {
            inv.reply_all(CaseStatus::Pass, "")
        } else {
            let msg = rule
                .fail_message
                .clone()
                .unwrap_or_else(|| "AssertionError: expected behaviour not observed".to_string());
            inv.reply_all(CaseStatus::Fail, &msg)
        }
    }
}

type Handler = dyn Fn(&FakeInvocation) -> Result<RunReply, RunnerError> + Send + Sync;

/// In-process runner returning scripted replies; records every working
/// directory it was handed.
pub struct FakeRunner {
    handler: Box<Handler>,
    log: Mutex<Vec<FakeInvocation>>,
}

impl FakeRunner {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&FakeInvocation) -> Result<RunReply, RunnerError> + Send + Sync + 'static,
    {
        Self {
            handler: Box::new(f),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_rules(rules: FakeRules) -> Self {
        Self::from_fn(move |inv| Ok(rules.evaluate(inv)))
    }

    pub fn invocations(&self) -> Vec<FakeInvocation> {
        self.log.lock().expect("fake runner log").clone()
    }

    pub fn workdirs(&self) -> Vec<PathBuf> {
        self.invocations().into_iter().map(|i| i.workdir).collect()
    }
}

impl Runner for FakeRunner {
    fn execute(&self, job: &RunJob<'_>) -> Result<RunReply, RunnerError> {
        let read = |f: &str| std::fs::read_to_string(job.workdir.join(f)).map_err(RunnerError::Io);
        let inv = FakeInvocation {
            workdir: job.workdir.to_path_buf(),
            suite_id: job.suite_id.to_string(),
            request: job.request.clone(),
            module_source: read(CLASS_MODULE_FILE)?,
            suite_source: read(SUITE_MODULE_FILE)?,
        };
        let reply = (self.handler)(&inv);
        self.log.lock().expect("fake runner log").push(inv);
        reply
    }
}
