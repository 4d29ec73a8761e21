//! Per-class synthesis: dependency analysis, scheduling, the per-method
//! generate/test/repair loop, and the three direct-generation baselines.

use crate::depgraph::{DependencyGraph, Schedule};
use crate::prompting::{
    self, extract_class_methods, extract_method_code, extract_reflection, parse_dep_response,
    sha256_hex, BackendConfig, BackendError, CompletionBackend, DepAnalysisResult, PromptBundle,
    RepairFeedback,
};
use crate::sandbox::{self, ExecLimits, Runner, SandboxError, TestOutcome};
use crate::taskmodel::{assemble_class_source, AssemblyError, ClassSource, ClassTask, MethodSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Tdd,
    Holistic,
    Incremental,
    Compositional,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Tdd,
        Strategy::Holistic,
        Strategy::Incremental,
        Strategy::Compositional,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Tdd => "tdd",
            Strategy::Holistic => "holistic",
            Strategy::Incremental => "incremental",
            Strategy::Compositional => "compositional",
        }
    }

    pub fn is_baseline(&self) -> bool {
        *self != Strategy::Tdd
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown strategy '{s}' (expected tdd, holistic, incremental or compositional)"
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: Strategy,
    /// Maximum repair rounds per method.
    pub repair_budget: u32,
    pub reflection_enabled: bool,
    /// Follow the predicted order as given; otherwise reorder
    /// topologically over the predicted dependency map.
    pub keep_predicted_order: bool,
    pub limits: ExecLimits,
    pub backend: BackendConfig,
}

impl RunConfig {
    pub fn new(strategy: Strategy, backend: BackendConfig) -> Self {
        Self {
            strategy,
            repair_budget: 3,
            reflection_enabled: true,
            keep_predicted_order: true,
            limits: ExecLimits::default(),
            backend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAttempt {
    /// 0 for the initial generation, then 1.. for repairs.
    pub round: u32,
    pub prompt_hash: String,
    pub response: String,
    pub response_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_body: Option<String>,
    /// Why the response could not be used (extraction or assembly).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_error: Option<String>,
    /// Public-suite outcome; absent for baselines and unusable responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TestOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<String>,
}

impl MethodAttempt {
    fn new(round: u32, bundle: &PromptBundle, response: String) -> Self {
        Self {
            round,
            prompt_hash: bundle.digest(),
            response_sha256: sha256_hex(&response),
            response,
            extracted_body: None,
            extraction_error: None,
            outcome: None,
            reflection: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.outcome.as_ref().is_some_and(TestOutcome::all_pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodStatus {
    /// Public suite passed.
    Accepted,
    /// Repair budget spent without passing; the last usable body is kept.
    Exhausted,
    /// Baseline output, never tested during generation.
    Generated,
    /// Left unfinished because the task was aborted.
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTrace {
    pub name: String,
    pub attempts: Vec<MethodAttempt>,
    pub status: MethodStatus,
    /// Definition used in the final class; `None` leaves the stub.
    #[serde(default)]
    pub final_body: Option<String>,
}

impl MethodTrace {
    pub fn repair_rounds(&self) -> u32 {
        self.attempts.len().saturating_sub(1) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepAttempt {
    pub round: u32,
    pub prompt_hash: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepStage {
    pub attempts: Vec<DepAttempt>,
    /// Validated analysis; after fallback, corpus order with no dependencies.
    pub result: DepAnalysisResult,
    pub fallback: bool,
}

/// The single whole-class request of the holistic baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAttempt {
    pub prompt_hash: String,
    pub response: String,
    pub response_sha256: String,
    pub extracted_methods: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub task_id: String,
    pub strategy: Strategy,
    pub template_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep_analysis: Option<DepStage>,
    pub schedule_used: Vec<String>,
    pub methods: Vec<MethodTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_attempt: Option<ClassAttempt>,
    #[serde(default)]
    pub final_class_source: Option<ClassSource>,
    pub repair_rounds_per_method: BTreeMap<String, u32>,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl GenerationTrace {
    fn new(task: &ClassTask, strategy: Strategy) -> Self {
        Self {
            task_id: task.task_id.clone(),
            strategy,
            template_version: prompting::TEMPLATE_VERSION.to_string(),
            dep_analysis: None,
            schedule_used: Vec::new(),
            methods: Vec::new(),
            class_attempt: None,
            final_class_source: None,
            repair_rounds_per_method: BTreeMap::new(),
            wall_time: 0.0,
            aborted: None,
        }
    }

    pub fn method(&self, name: &str) -> Option<&MethodTrace> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Backend requests recorded in the trace.
    pub fn backend_calls(&self) -> usize {
        self.dep_analysis.as_ref().map_or(0, |d| d.attempts.len())
            + self.class_attempt.iter().count()
            + self.methods.iter().map(|m| m.attempts.len()).sum::<usize>()
    }

    pub fn is_fallback(&self) -> bool {
        self.dep_analysis.as_ref().is_some_and(|d| d.fallback)
    }

    fn finish(&mut self, task: &ClassTask, started: Instant) {
        self.repair_rounds_per_method = if self.strategy == Strategy::Tdd {
            self.methods
                .iter()
                .map(|m| (m.name.clone(), m.repair_rounds()))
                .collect()
        } else {
            BTreeMap::new()
        };
        if self.final_class_source.is_none() {
            let bodies = final_bodies(&self.methods);
            self.final_class_source = assemble_class_source(task, &bodies).ok();
        }
        self.wall_time = started.elapsed().as_secs_f64();
    }
}

fn final_bodies(methods: &[MethodTrace]) -> BTreeMap<String, String> {
    methods
        .iter()
        .filter_map(|m| m.final_body.clone().map(|b| (m.name.clone(), b)))
        .collect()
}

/// Infrastructure failure; aborts the task.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("sandbox: {0}")]
    Sandbox(#[from] SandboxError),
    #[error("run_baseline requires a baseline strategy")]
    NotABaseline,
    #[error("assembly of finalized methods failed: {0}")]
    Assembly(#[from] AssemblyError),
}

/// Everything a pipeline needs besides the task.
pub struct Pipeline<'a> {
    pub config: &'a RunConfig,
    pub backend: &'a dyn CompletionBackend,
    pub runner: &'a dyn Runner,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: &'a RunConfig,
        backend: &'a dyn CompletionBackend,
        runner: &'a dyn Runner,
    ) -> Self {
        Self {
            config,
            backend,
            runner,
        }
    }

    /// Runs the configured strategy on one task.
    pub fn run(&self, task: &ClassTask) -> GenerationTrace {
        match self.config.strategy {
            Strategy::Tdd => self.generate_class_tdd(task),
            _ => self.run_baseline(task),
        }
    }

    /// Dependency analysis, with one re-ask carrying the validation error.
    /// A second invalid response falls back to corpus order.
    pub fn analyze_dependencies(&self, task: &ClassTask) -> Result<DepStage, BackendError> {
        let first = prompting::render_dep_prompt(task);
        let mut attempts = Vec::new();
        let mut bundle = first.clone();
        for round in 0..2 {
            let response = self.backend.complete(&bundle)?;
            let parsed = parse_dep_response(&response, task);
            attempts.push(DepAttempt {
                round,
                prompt_hash: bundle.digest(),
                response,
                error: parsed.as_ref().err().map(ToString::to_string),
            });
            match parsed {
                Ok(result) => {
                    return Ok(DepStage {
                        attempts,
                        result,
                        fallback: false,
                    })
                }
                Err(e) => {
                    bundle = first.clone();
                    bundle.key.round = 1;
                    bundle.body.push_str(&format!(
                        "\n## Correction\nYour previous answer was rejected: {e}\nReturn the corrected JSON object only.\n"
                    ));
                }
            }
        }
        log::warn!(
            "{}: dependency analysis unusable, falling back to corpus order",
            task.task_id
        );
        Ok(DepStage {
            attempts,
            result: DepAnalysisResult {
                dep_map: BTreeMap::new(),
                schedule: Schedule::new(task.methods.iter().map(|m| m.name.clone()).collect()),
            },
            fallback: true,
        })
    }

    fn schedule_for(&self, task: &ClassTask, deps: &DepStage) -> Vec<String> {
        let predicted = deps.result.schedule.order.clone();
        if self.config.keep_predicted_order || deps.fallback {
            return predicted;
        }
        let nodes: Vec<String> = task.methods.iter().map(|m| m.name.clone()).collect();
        let graph = DependencyGraph::from_dep_map(
            &nodes,
            deps.result.dep_map.iter().map(|(k, v)| (k, v.iter())),
        );
        match graph.map(|g| g.topological_order()) {
            Ok(Ok(order)) => order.order,
            Ok(Err(cycle)) => {
                log::warn!(
                    "{}: predicted dependencies are cyclic ({cycle}); keeping predicted order",
                    task.task_id
                );
                predicted
            }
            Err(e) => {
                log::warn!(
                    "{}: predicted dependencies unusable ({e}); keeping predicted order",
                    task.task_id
                );
                predicted
            }
        }
    }

    /// The test-driven pipeline: analysis once, then each method in
    /// schedule order through [`Pipeline::repair_method`].
    pub fn generate_class_tdd(&self, task: &ClassTask) -> GenerationTrace {
        let started = Instant::now();
        let mut trace = GenerationTrace::new(task, Strategy::Tdd);
        if let Err(e) = self.tdd_inner(task, &mut trace) {
            log::error!("{}: aborted: {e}", task.task_id);
            trace.aborted = Some(e.to_string());
        }
        trace.finish(task, started);
        trace
    }

    fn tdd_inner(
        &self,
        task: &ClassTask,
        trace: &mut GenerationTrace,
    ) -> Result<(), PipelineError> {
        let deps = self.analyze_dependencies(task)?;
        trace.schedule_used = self.schedule_for(task, &deps);
        trace.dep_analysis = Some(deps);
        trace.methods = trace
            .schedule_used
            .iter()
            .map(|name| MethodTrace {
                name: name.clone(),
                attempts: Vec::new(),
                status: MethodStatus::Incomplete,
                final_body: None,
            })
            .collect();
        let mut finals = BTreeMap::new();
        for i in 0..trace.methods.len() {
            let name = trace.methods[i].name.clone();
            let method = task.method(&name).expect("schedule names are validated");
            let partial = assemble_class_source(task, &finals)?;
            let prompt = prompting::render_generation_prompt(task, &partial.class_text, method);
            let response = self.backend.complete(&prompt)?;
            let first = MethodAttempt::new(0, &prompt, response);
            self.repair_method(task, method, &finals, first, &mut trace.methods[i])?;
            if let Some(body) = &trace.methods[i].final_body {
                finals.insert(name, body.clone());
            }
        }
        Ok(())
    }

    /// Tests `first`, then repairs until the public suite passes or the
    /// budget is spent. Attempts are appended to `out` as they complete, so
    /// an aborted loop still leaves a faithful record.
    pub fn repair_method(
        &self,
        task: &ClassTask,
        method: &MethodSpec,
        finals: &BTreeMap<String, String>,
        first: MethodAttempt,
        out: &mut MethodTrace,
    ) -> Result<(), PipelineError> {
        let config = self.config;
        let partial = assemble_class_source(task, finals)
            .map(|c| c.class_text)
            .unwrap_or_default();
        let mut attempt = first;
        let mut last_usable: Option<String> = None;
        let mut history: Vec<String> = Vec::new();
        loop {
            if let Err(e) = self.evaluate(task, method, finals, &mut attempt) {
                out.attempts.push(attempt);
                return Err(e.into());
            }
            if attempt.outcome.is_some() {
                last_usable = attempt.extracted_body.clone();
            }
            let round = attempt.round;
            let passed = attempt.passed();
            if let Some(r) = &attempt.reflection {
                history.push(r.clone());
            }
            out.attempts.push(attempt);
            if passed {
                out.status = MethodStatus::Accepted;
                break;
            }
            if round >= config.repair_budget {
                out.status = MethodStatus::Exhausted;
                break;
            }
            let previous = out.attempts.last().expect("just pushed");
            let feedback = match (&previous.outcome, &previous.extraction_error) {
                (Some(outcome), _) => RepairFeedback::Tests(outcome),
                (None, Some(err)) => RepairFeedback::Unusable(err),
                (None, None) => RepairFeedback::Unusable("no code"),
            };
            let failing = previous
                .extracted_body
                .clone()
                .or_else(|| last_usable.clone())
                .unwrap_or_default();
            let prompt = prompting::render_repair_prompt(
                task,
                &partial,
                method,
                &failing,
                feedback,
                &history,
                round + 1,
                config.reflection_enabled,
            );
            let response = self.backend.complete(&prompt)?;
            attempt = MethodAttempt::new(round + 1, &prompt, response);
            if config.reflection_enabled {
                attempt.reflection = Some(extract_reflection(&attempt.response));
            }
        }
        out.final_body = last_usable;
        Ok(())
    }

    /// Extracts and tests one attempt's code against the method's public suite.
    fn evaluate(
        &self,
        task: &ClassTask,
        method: &MethodSpec,
        finals: &BTreeMap<String, String>,
        attempt: &mut MethodAttempt,
    ) -> Result<(), SandboxError> {
        let body = match extract_method_code(&attempt.response, &method.name) {
            Ok(b) => b,
            Err(e) => {
                attempt.extraction_error = Some(e.to_string());
                return Ok(());
            }
        };
        attempt.extracted_body = Some(body.clone());
        let mut bodies = finals.clone();
        bodies.insert(method.name.clone(), body);
        let class = match assemble_class_source(task, &bodies) {
            Ok(c) => c,
            Err(e) => {
                attempt.extraction_error = Some(e.to_string());
                return Ok(());
            }
        };
        attempt.outcome = Some(sandbox::run_suite(
            &class,
            &method.public_suite,
            &self.config.limits,
            self.runner,
        )?);
        Ok(())
    }

    /// Direct generation without tests or repair.
    pub fn run_baseline(&self, task: &ClassTask) -> GenerationTrace {
        let started = Instant::now();
        let mut trace = GenerationTrace::new(task, self.config.strategy);
        trace.schedule_used = task.methods.iter().map(|m| m.name.clone()).collect();
        let result = match self.config.strategy {
            Strategy::Holistic => self.holistic(task, &mut trace),
            Strategy::Incremental => self.per_method(task, &mut trace, true),
            Strategy::Compositional => self.per_method(task, &mut trace, false),
            Strategy::Tdd => Err(PipelineError::NotABaseline),
        };
        if let Err(e) = result {
            log::error!("{}: aborted: {e}", task.task_id);
            trace.aborted = Some(e.to_string());
        }
        trace.finish(task, started);
        trace
    }

    fn holistic(&self, task: &ClassTask, trace: &mut GenerationTrace) -> Result<(), PipelineError> {
        let prompt = prompting::render_holistic_prompt(task, &task.skeleton);
        let response = self.backend.complete(&prompt)?;
        let mut bodies = extract_class_methods(&response, task);
        let extracted: Vec<String> = bodies.keys().cloned().collect();
        let rejected = drop_unassemblable(task, &mut bodies);
        trace.class_attempt = Some(ClassAttempt {
            prompt_hash: prompt.digest(),
            response_sha256: sha256_hex(&response),
            response,
            extracted_methods: extracted,
            rejected,
        });
        trace.methods = task
            .methods
            .iter()
            .map(|m| MethodTrace {
                name: m.name.clone(),
                attempts: Vec::new(),
                status: MethodStatus::Generated,
                final_body: bodies.get(&m.name).cloned(),
            })
            .collect();
        Ok(())
    }

    fn per_method(
        &self,
        task: &ClassTask,
        trace: &mut GenerationTrace,
        incremental: bool,
    ) -> Result<(), PipelineError> {
        let mut finals = BTreeMap::new();
        for method in &task.methods {
            let prompt = if incremental {
                let partial = assemble_class_source(task, &finals)?;
                prompting::render_incremental_prompt(task, &partial.class_text, method)
            } else {
                prompting::render_compositional_prompt(task, &task.skeleton, method)
            };
            let response = self.backend.complete(&prompt)?;
            let mut attempt = MethodAttempt::new(0, &prompt, response);
            match extract_method_code(&attempt.response, &method.name) {
                Ok(body) => {
                    let mut trial = finals.clone();
                    trial.insert(method.name.clone(), body.clone());
                    match assemble_class_source(task, &trial) {
                        Ok(_) => {
                            finals = trial;
                        }
                        Err(e) => attempt.extraction_error = Some(e.to_string()),
                    }
                    attempt.extracted_body = Some(body);
                }
                Err(e) => attempt.extraction_error = Some(e.to_string()),
            }
            trace.methods.push(MethodTrace {
                name: method.name.clone(),
                attempts: vec![attempt],
                status: MethodStatus::Generated,
                final_body: finals.get(&method.name).cloned(),
            });
        }
        Ok(())
    }
}

/// Removes bodies the assembler attributes errors to until the rest assembles.
fn drop_unassemblable(task: &ClassTask, bodies: &mut BTreeMap<String, String>) -> Vec<String> {
    let mut rejected = Vec::new();
    loop {
        match assemble_class_source(task, bodies) {
            Ok(_) => return rejected,
            Err(e) => match e
                .method()
                .map(str::to_string)
                .filter(|m| bodies.contains_key(m))
            {
                Some(m) => {
                    bodies.remove(&m);
                    rejected.push(format!("{m}: {e}"));
                }
                None => {
                    rejected.extend(bodies.keys().map(|m| format!("{m}: {e}")));
                    bodies.clear();
                    return rejected;
                }
            },
        }
    }
}

/// Private-evaluation results for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcomes {
    pub task_id: String,
    pub strategy: Strategy,
    /// Keyed by suite id; empty when no final class could be evaluated.
    pub suites: BTreeMap<String, TestOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs every private suite against the trace's final class.
pub fn evaluate_trace(
    task: &ClassTask,
    trace: &GenerationTrace,
    limits: &ExecLimits,
    runner: &dyn Runner,
) -> TaskOutcomes {
    let mut out = TaskOutcomes {
        task_id: task.task_id.clone(),
        strategy: trace.strategy,
        suites: BTreeMap::new(),
        error: None,
    };
    let Some(class) = &trace.final_class_source else {
        out.error = Some("no final class".to_string());
        return out;
    };
    match sandbox::run_private_evaluation(task, class, limits, runner) {
        Ok(suites) => out.suites = suites,
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub trace: GenerationTrace,
    pub outcomes: TaskOutcomes,
}

/// Generation followed by private evaluation for every task, with up to
/// `parallel` tasks in flight. Results keep the input order.
pub fn run_tasks(
    tasks: &[ClassTask],
    config: &RunConfig,
    backend: &dyn CompletionBackend,
    runner: &dyn Runner,
    parallel: usize,
) -> Vec<TaskRun> {
    use rayon::prelude::*;
    let pipeline = Pipeline::new(config, backend, runner);
    let one = |task: &ClassTask| {
        let trace = pipeline.run(task);
        let outcomes = evaluate_trace(task, &trace, &config.limits, runner);
        TaskRun { trace, outcomes }
    };
    if parallel <= 1 {
        return tasks.iter().map(one).collect();
    }
    match rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
    {
        Ok(pool) => pool.install(|| tasks.par_iter().map(one).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running sequentially");
            tasks.iter().map(one).collect()
        }
    }
}

/// Appends traces as JSON Lines.
pub fn write_traces<W: std::io::Write>(
    mut w: W,
    traces: &[GenerationTrace],
) -> std::io::Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_traces(text: &str) -> Result<Vec<GenerationTrace>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests;
