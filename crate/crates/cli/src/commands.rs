use crate::config::{self, EffectiveConfig, FileConfig, FlagConfig};
use crate::{DepcheckArgs, ReportArgs, RunArgs, ValidateArgs};
use anyhow::{bail, Context, Result};
use globset::{Glob, GlobSetBuilder};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use tdd_harness::depgraph::{DependencyGraph, Schedule};
use tdd_harness::metrics::{compare_with_best_baseline, deltas_to_text, DeltaEntry, EvalReport};
use tdd_harness::prompting::backend_from_config;
use tdd_harness::sandbox::{FakeRules, FakeRunner, ProcessRunner, Runner};
use tdd_harness::taskmodel::{load_benchmark, ClassTask};
use tdd_harness::tddloop::{read_traces, run_tasks, write_traces, GenerationTrace, TaskOutcomes};

pub const TRACES_FILE: &str = "traces.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const RUN_FILE: &str = "run.json";

/// Bad flags or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow::Error::new(UsageError(format!("{e:#}")))
}

fn select_tasks(tasks: Vec<ClassTask>, patterns: &[String]) -> Result<Vec<ClassTask>> {
    if patterns.is_empty() {
        return Ok(tasks);
    }
    let mut builder = GlobSetBuilder::new();
    for p in patterns {
        builder.add(Glob::new(p).map_err(usage)?);
    }
    let set = builder.build().map_err(usage)?;
    for (i, p) in patterns.iter().enumerate() {
        let single = Glob::new(p).map_err(usage)?.compile_matcher();
        if !tasks.iter().any(|t| single.is_match(&t.task_id)) {
            return Err(usage(format!(
                "--tasks pattern {:?} matches no task",
                patterns[i]
            )));
        }
    }
    Ok(tasks
        .into_iter()
        .filter(|t| set.is_match(&t.task_id))
        .collect())
}

fn make_runner(spec: &str) -> Result<Box<dyn Runner>> {
    if let Some(path) = spec.strip_prefix("fake:") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading fake runner rules {path}"))?;
        let rules: FakeRules =
            serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?;
        return Ok(Box::new(FakeRunner::from_rules(rules)));
    }
    let runner =
        ProcessRunner::from_command_line(spec).ok_or_else(|| usage("empty --runner command"))?;
    Ok(Box::new(runner))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a EffectiveConfig,
    reports: Vec<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Vec<DeltaEntry>>,
}

fn write_reports(
    out: &Path,
    eff: &EffectiveConfig,
    tasks: &[ClassTask],
    traces: &[GenerationTrace],
    outcomes: &[TaskOutcomes],
) -> Result<()> {
    let reports: Vec<EvalReport> = eff
        .strategies
        .iter()
        .map(|s| EvalReport::build(*s, tasks, traces, outcomes))
        .collect::<Result<_, _>>()?;
    let comparison = compare_with_best_baseline(&reports);
    let mut text = String::new();
    for r in &reports {
        text.push_str(&r.to_text());
    }
    if let Some(d) = &comparison {
        text.push_str(&deltas_to_text(d));
    }
    write_json(
        &out.join(REPORT_JSON),
        &ReportFile {
            config: eff,
            reports: reports.iter().map(EvalReport::rounded).collect(),
            comparison,
        },
    )?;
    std::fs::write(out.join(REPORT_TXT), &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p).map_err(usage)?,
        None => FileConfig::default(),
    };
    let flags = FlagConfig {
        corpus: a.corpus,
        tasks: a.tasks,
        strategies: a.strategy,
        backend: a.backend,
        model: a.model,
        repair_budget: a.repair_budget,
        reflection: a.no_reflection.then_some(false),
        keep_order: if a.repair_order {
            Some(false)
        } else {
            a.keep_order.then_some(true)
        },
        timeout: a.timeout,
        seed: a.seed,
        parallel: a.parallel,
        out: a.out,
        runner: a.runner,
    };
    let eff = config::resolve(flags, file).map_err(usage)?;
    let tasks = select_tasks(load_benchmark(&eff.corpus)?, &eff.tasks)?;
    let backend = backend_from_config(&eff.run.backend)?;
    let runner = make_runner(&eff.runner)?;
    std::fs::create_dir_all(&eff.out).with_context(|| format!("creating {}", eff.out.display()))?;
    write_json(&eff.out.join(RUN_FILE), &eff)?;

    let mut traces = Vec::new();
    let mut outcomes = Vec::new();
    for strategy in &eff.strategies {
        let mut run = eff.run.clone();
        run.strategy = *strategy;
        log::info!("running {strategy} on {} tasks", tasks.len());
        for r in run_tasks(
            &tasks,
            &run,
            backend.as_ref(),
            runner.as_ref(),
            eff.parallel,
        ) {
            traces.push(r.trace);
            outcomes.push(r.outcomes);
        }
    }
    let mut buf = Vec::new();
    write_traces(&mut buf, &traces)?;
    std::fs::write(eff.out.join(TRACES_FILE), buf)?;
    write_json(&eff.out.join(OUTCOMES_FILE), &outcomes)?;
    write_reports(&eff.out, &eff, &tasks, &traces, &outcomes)?;

    let aborted: Vec<String> = traces
        .iter()
        .filter_map(|t| {
            t.aborted
                .as_ref()
                .map(|why| format!("{} ({}): {why}", t.task_id, t.strategy))
        })
        .chain(outcomes.iter().filter_map(|o| {
            o.error
                .as_ref()
                .map(|why| format!("{} ({}) evaluation: {why}", o.task_id, o.strategy))
        }))
        .collect();
    if aborted.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for line in &aborted {
            eprintln!("aborted: {line}");
        }
        Ok(ExitCode::from(1))
    }
}

pub fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    let traces_path = a.out.join(TRACES_FILE);
    if !traces_path.is_file() {
        bail!("no traces found at {}", traces_path.display());
    }
    let eff: EffectiveConfig = serde_json::from_str(
        &std::fs::read_to_string(a.out.join(RUN_FILE))
            .with_context(|| format!("reading {RUN_FILE}"))?,
    )
    .with_context(|| format!("parsing {RUN_FILE}"))?;
    let traces = read_traces(&std::fs::read_to_string(&traces_path)?).context("parsing traces")?;
    let outcomes: Vec<TaskOutcomes> = serde_json::from_str(
        &std::fs::read_to_string(a.out.join(OUTCOMES_FILE))
            .with_context(|| format!("reading {OUTCOMES_FILE}"))?,
    )
    .with_context(|| format!("parsing {OUTCOMES_FILE}"))?;
    let corpus = a.corpus.unwrap_or_else(|| eff.corpus.clone());
    let tasks: Vec<ClassTask> = load_benchmark(&corpus)?
        .into_iter()
        .filter(|t| traces.iter().any(|tr| tr.task_id == t.task_id))
        .collect();
    if let Some(t) = traces
        .iter()
        .find(|tr| !tasks.iter().any(|t| t.task_id == tr.task_id))
    {
        bail!(
            "trace for task {} has no task in corpus {}",
            t.task_id,
            corpus.display()
        );
    }
    write_reports(&a.out, &eff, &tasks, &traces, &outcomes)?;
    Ok(ExitCode::SUCCESS)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_depcheck(a: DepcheckArgs) -> Result<ExitCode> {
    let graphs: BTreeMap<String, DependencyGraph> = match (&a.corpus, &a.graphs) {
        (Some(c), _) => load_benchmark(c)?
            .iter()
            .map(|t| (t.task_id.clone(), DependencyGraph::ground_truth(t)))
            .collect(),
        (None, Some(g)) => read_json::<BTreeMap<String, DependencyGraph>>(g)?
            .into_iter()
            .map(|(id, g)| {
                DependencyGraph::new(g.nodes, g.edges)
                    .map(|g| (id.clone(), g))
                    .with_context(|| format!("graph for {id}"))
            })
            .collect::<Result<_>>()?,
        (None, None) => return Err(usage("depcheck needs --corpus or --graphs")),
    };
    let orders: Vec<(String, Schedule)> = match (&a.orders, &a.traces) {
        (Some(p), _) => read_json::<BTreeMap<String, Vec<String>>>(p)?
            .into_iter()
            .map(|(id, order)| (id, Schedule::new(order)))
            .collect(),
        (None, Some(p)) => read_traces(&std::fs::read_to_string(p)?)?
            .into_iter()
            .filter_map(|t| t.dep_analysis.map(|d| (t.task_id, d.result.schedule)))
            .collect(),
        (None, None) => return Err(usage("depcheck needs --orders or --traces")),
    };

    let mut rows = Vec::new();
    for (id, schedule) in &orders {
        let graph = graphs
            .get(id)
            .with_context(|| format!("no ground-truth graph for task {id}"))?;
        let violated = graph
            .check_schedule(schedule)
            .with_context(|| format!("task {id}"))?;
        if !violated.is_empty() {
            let edges: Vec<String> = violated.iter().map(ToString::to_string).collect();
            rows.push((id.clone(), edges.join("; ")));
        }
    }
    if !rows.is_empty() {
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(4).max(4);
        println!(
            "{:<w$} | violated edges (dependent -> prerequisite)",
            "task"
        );
        for (id, edges) in &rows {
            println!("{id:<w$} | {edges}");
        }
    }
    println!(
        "{} of {} tasks violate their dependency order",
        rows.len(),
        orders.len()
    );
    Ok(if rows.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

pub fn cmd_validate(a: ValidateArgs) -> Result<ExitCode> {
    // loading already rejects the first invalid task
    let tasks = load_benchmark(&a.corpus)?;
    let (n, m) = tdd_harness::taskmodel::corpus_shape(&tasks);
    println!(
        "{}: {n} tasks, {m} target methods, all valid",
        a.corpus.display()
    );
    Ok(ExitCode::SUCCESS)
}
