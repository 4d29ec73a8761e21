//! Benchmark class tasks: loading, validation and source assembly.
//!
//! A task is immutable once loaded. Generated method definitions are
//! spliced into the skeleton by [`assemble_class_source`]; target methods
//! without a generated definition keep their signature and docstring and
//! raise [`STUB_SIGNAL`] so that calls to missing methods are easy to tell
//! apart from logic failures.

use crate::pysrc::{self, SingleFunctionError, SyntaxError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

/// Marker carried by the `NotImplementedError` raised from unimplemented stubs.
pub const STUB_SIGNAL: &str = "__tdd_stub_not_implemented__";

/// Name of the pre-provided constructor, which is never a target method.
pub const CONSTRUCTOR: &str = "__init__";

/// Shape of the full benchmark corpus.
pub const CORPUS_TASKS: usize = 100;
pub const CORPUS_METHODS: usize = 412;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    #[default]
    Public,
    PrivateMethod,
    PrivateClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuiteRef {
    pub suite_id: String,
    pub source: String,
    #[serde(rename = "cases")]
    pub case_names: Vec<String>,
    /// Assigned from the suite's position in the task at load time.
    #[serde(skip)]
    pub kind: SuiteKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub signature: String,
    pub docstring: String,
    #[serde(default)]
    pub gt_deps: Vec<String>,
    #[serde(rename = "public_tests")]
    pub public_suite: TestSuiteRef,
    #[serde(rename = "private_tests")]
    pub private_suite: TestSuiteRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTask {
    pub task_id: String,
    pub class_name: String,
    #[serde(default)]
    pub preamble: String,
    pub skeleton: String,
    /// Target methods, in corpus order.
    pub methods: Vec<MethodSpec>,
    #[serde(rename = "class_private_tests")]
    pub class_private_suite: TestSuiteRef,
    /// Known-good implementation of the class body; evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_solution: Option<String>,
}

impl ClassTask {
    pub fn method_names(&self) -> Vec<&str> {
        self.methods.iter().map(|m| m.name.as_str()).collect()
    }

    pub fn method(&self, name: &str) -> Option<&MethodSpec> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Every private suite: one per method, then the class-level suite.
    pub fn private_suites(&self) -> impl Iterator<Item = &TestSuiteRef> {
        self.methods
            .iter()
            .map(|m| &m.private_suite)
            .chain(std::iter::once(&self.class_private_suite))
    }

    fn assign_suite_kinds(&mut self) {
        for m in &mut self.methods {
            m.public_suite.kind = SuiteKind::Public;
            m.private_suite.kind = SuiteKind::PrivateMethod;
        }
        self.class_private_suite.kind = SuiteKind::PrivateClass;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateMethod,
    ConstructorIncluded,
    SelfDependency,
    UnknownDependency,
    DependencyCycle,
    EmptySuite,
    UnresolvedSuite,
    DuplicateSuiteId,
    SkeletonSyntax,
    MissingClass,
    MissingMethodStub,
    PreambleSyntax,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::DuplicateMethod => "duplicate method",
            Rule::ConstructorIncluded => "constructor must be excluded",
            Rule::SelfDependency => "self dependency",
            Rule::UnknownDependency => "unknown dependency",
            Rule::DependencyCycle => "dependency cycle",
            Rule::EmptySuite => "empty test suite",
            Rule::UnresolvedSuite => "unresolved test suite",
            Rule::DuplicateSuiteId => "duplicate suite id",
            Rule::SkeletonSyntax => "skeleton does not parse",
            Rule::MissingClass => "class missing from skeleton",
            Rule::MissingMethodStub => "method missing from skeleton",
            Rule::PreambleSyntax => "preamble does not parse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub task_id: String,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, rule: Rule, detail: impl Into<String>) {
        self.issues.push(ValidationIssue {
            rule,
            detail: detail.into(),
        });
    }
}

fn check_suite(report: &mut ValidationReport, owner: &str, suite: &TestSuiteRef) {
    if suite.case_names.is_empty() {
        report.push(
            Rule::EmptySuite,
            format!("{owner}: suite '{}' has no cases", suite.suite_id),
        );
    }
    if suite.suite_id.trim().is_empty() || suite.source.trim().is_empty() {
        report.push(
            Rule::UnresolvedSuite,
            format!("{owner}: suite id or source is empty"),
        );
        return;
    }
    for case in &suite.case_names {
        let bare = case.rsplit('.').next().unwrap_or(case);
        if !suite.source.contains(&format!("def {bare}(")) {
            report.push(
                Rule::UnresolvedSuite,
                format!(
                    "{owner}: case '{case}' not defined in suite '{}'",
                    suite.suite_id
                ),
            );
        }
    }
}

/// Lists every violated task invariant. Never fails; an empty report
/// means the task is valid.
pub fn validate_task(task: &ClassTask) -> ValidationReport {
    let mut report = ValidationReport {
        task_id: task.task_id.clone(),
        issues: Vec::new(),
    };

    let mut seen = HashSet::new();
    for m in &task.methods {
        if !seen.insert(m.name.as_str()) {
            report.push(Rule::DuplicateMethod, m.name.clone());
        }
        if m.name == CONSTRUCTOR {
            report.push(
                Rule::ConstructorIncluded,
                "__init__ listed as a target method",
            );
        }
    }
    let names: HashSet<&str> = task.methods.iter().map(|m| m.name.as_str()).collect();
    for m in &task.methods {
        for dep in &m.gt_deps {
            if dep == &m.name {
                report.push(Rule::SelfDependency, m.name.clone());
            } else if !names.contains(dep.as_str()) {
                report.push(
                    Rule::UnknownDependency,
                    format!("{} depends on unknown method '{dep}'", m.name),
                );
            }
        }
    }
    if !report
        .issues
        .iter()
        .any(|i| i.rule == Rule::UnknownDependency)
    {
        if let Err(cycle) = crate::depgraph::DependencyGraph::ground_truth(task).topological_order()
        {
            report.push(Rule::DependencyCycle, cycle.to_string());
        }
    }

    let mut suite_ids = HashSet::new();
    for m in &task.methods {
        check_suite(&mut report, &m.name, &m.public_suite);
        check_suite(&mut report, &m.name, &m.private_suite);
    }
    check_suite(&mut report, "class", &task.class_private_suite);
    for suite in task
        .methods
        .iter()
        .map(|m| &m.public_suite)
        .chain(task.private_suites())
    {
        if !suite.suite_id.is_empty() && !suite_ids.insert(suite.suite_id.as_str()) {
            report.push(Rule::DuplicateSuiteId, suite.suite_id.clone());
        }
    }

    if !task.preamble.trim().is_empty() {
        if let Err(e) = pysrc::parse_module(&task.preamble) {
            report.push(Rule::PreambleSyntax, e.to_string());
        }
    }
    match pysrc::parse_module(&task.skeleton) {
        Err(e) => report.push(Rule::SkeletonSyntax, e.to_string()),
        Ok(suite) => match pysrc::find_class(&suite, &task.class_name) {
            None => report.push(Rule::MissingClass, task.class_name.clone()),
            Some(class) => {
                let present: HashSet<String> =
                    pysrc::class_method_names(class).into_iter().collect();
                for m in &task.methods {
                    if !present.contains(&m.name) {
                        report.push(Rule::MissingMethodStub, m.name.clone());
                    }
                }
            }
        },
    }
    report
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: record {record}{}: {message}", .task_id.as_ref().map(|t| format!(" ({t})")).unwrap_or_default())]
    Json {
        path: PathBuf,
        record: usize,
        task_id: Option<String>,
        message: String,
    },
    #[error("task {task_id}: {issue}")]
    Validation {
        task_id: String,
        issue: ValidationIssue,
    },
    #[error("duplicate task id {0}")]
    DuplicateTask(String),
}

fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_records(path: &Path, text: &str) -> Result<Vec<ClassTask>, LoadError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| LoadError::Json {
        path: path.to_path_buf(),
        record: 0,
        task_id: None,
        message: e.to_string(),
    })?;
    let records = match value {
        serde_json::Value::Array(items) => items,
        obj @ serde_json::Value::Object(_) => vec![obj],
        other => {
            return Err(LoadError::Json {
                path: path.to_path_buf(),
                record: 0,
                task_id: None,
                message: format!("expected a task array or object, found {other}"),
            })
        }
    };
    records
        .into_iter()
        .enumerate()
        .map(|(i, record)| {
            let task_id = record
                .get("task_id")
                .and_then(|v| v.as_str())
                .map(str::to_string);
            serde_json::from_value::<ClassTask>(record).map_err(|e| LoadError::Json {
                path: path.to_path_buf(),
                record: i,
                task_id,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Loads a corpus: either one JSON file holding an array of tasks, or a
/// directory of `*.json` files (one task or an array each, read in file
/// name order). Every task is validated.
pub fn load_benchmark(path: impl AsRef<Path>) -> Result<Vec<ClassTask>, LoadError> {
    let path = path.as_ref();
    let mut tasks = Vec::new();
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for file in files {
            tasks.extend(parse_records(&file, &read(&file)?)?);
        }
    } else {
        tasks = parse_records(path, &read(path)?)?;
    }

    let mut ids = HashSet::new();
    for task in &mut tasks {
        task.assign_suite_kinds();
        if !ids.insert(task.task_id.clone()) {
            return Err(LoadError::DuplicateTask(task.task_id.clone()));
        }
        let report = validate_task(task);
        if let Some(issue) = report.issues.into_iter().next() {
            return Err(LoadError::Validation {
                task_id: task.task_id.clone(),
                issue,
            });
        }
    }
    Ok(tasks)
}

pub fn save_benchmark(path: impl AsRef<Path>, tasks: &[ClassTask]) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(tasks).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

/// Counts of tasks and target methods in a corpus.
pub fn corpus_shape(tasks: &[ClassTask]) -> (usize, usize) {
    (tasks.len(), tasks.iter().map(|t| t.methods.len()).sum())
}

/// Assembled module: the frozen preamble followed by the class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSource {
    pub preamble: String,
    pub class_text: String,
}

impl ClassSource {
    pub fn module_source(&self) -> String {
        if self.preamble.trim().is_empty() {
            self.class_text.clone()
        } else {
            format!("{}\n\n{}", self.preamble.trim_end(), self.class_text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssemblyError {
    #[error("'{0}' is not a target method of this task")]
    UnknownMethod(String),
    #[error("body for '{method}' is invalid: {error}")]
    InvalidBody {
        method: String,
        error: SingleFunctionError,
    },
    #[error("body for '{method}' defines '{found}' instead")]
    NameMismatch { method: String, found: String },
    #[error("assembled class fails to parse in '{method}': {error}")]
    BrokenClass { method: String, error: SyntaxError },
    #[error("skeleton is unusable: {0}")]
    Skeleton(String),
}

impl AssemblyError {
    /// Method the error is attributed to, when there is one.
    pub fn method(&self) -> Option<&str> {
        match self {
            AssemblyError::UnknownMethod(m)
            | AssemblyError::InvalidBody { method: m, .. }
            | AssemblyError::NameMismatch { method: m, .. }
            | AssemblyError::BrokenClass { method: m, .. } => Some(m),
            AssemblyError::Skeleton(_) => None,
        }
    }
}

fn stub_text(region: &pysrc::MethodRegion) -> String {
    let mut out = region.header.clone();
    if let Some(doc) = &region.docstring {
        out.push_str(doc);
    }
    out.push_str(&format!(
        "{}raise NotImplementedError(\"{STUB_SIGNAL}: {}\")\n",
        region.body_indent, region.name
    ));
    out
}

/// Splices generated method definitions into the task skeleton.
///
/// `bodies` maps a target method name to a complete `def` (any
/// indentation). Target methods absent from `bodies` become stubs that
/// raise [`STUB_SIGNAL`]. The result is whitespace-normalized and parses.
pub fn assemble_class_source(
    task: &ClassTask,
    bodies: &BTreeMap<String, String>,
) -> Result<ClassSource, AssemblyError> {
    let targets: BTreeSet<&str> = task.methods.iter().map(|m| m.name.as_str()).collect();
    let mut prepared = BTreeMap::new();
    for (name, body) in bodies {
        if !targets.contains(name.as_str()) {
            return Err(AssemblyError::UnknownMethod(name.clone()));
        }
        let (found, dedented) =
            pysrc::parse_single_function(body).map_err(|error| AssemblyError::InvalidBody {
                method: name.clone(),
                error,
            })?;
        if &found != name {
            return Err(AssemblyError::NameMismatch {
                method: name.clone(),
                found,
            });
        }
        prepared.insert(name.as_str(), dedented);
    }

    let skeleton = pysrc::normalize_ws(&task.skeleton);
    let suite =
        pysrc::parse_module(&skeleton).map_err(|e| AssemblyError::Skeleton(e.to_string()))?;
    let class = pysrc::find_class(&suite, &task.class_name)
        .ok_or_else(|| AssemblyError::Skeleton(format!("class {} not found", task.class_name)))?;
    let regions: Vec<_> = pysrc::method_regions(&skeleton, class)
        .into_iter()
        .filter(|r| targets.contains(r.name.as_str()))
        .collect();
    if let Some(missing) = targets
        .iter()
        .find(|t| !regions.iter().any(|r| r.name == **t))
    {
        return Err(AssemblyError::Skeleton(format!(
            "no stub for method {missing}"
        )));
    }

    let lines: Vec<&str> = skeleton.split('\n').collect();
    let mut out = String::with_capacity(skeleton.len() * 2);
    // (method, first line, one past last line) in the output
    let mut spans: Vec<(&str, usize, usize)> = Vec::new();
    let mut cursor = 0;
    let mut out_line = 0;
    for region in &regions {
        for line in &lines[cursor..region.start_line] {
            out.push_str(line);
            out.push('\n');
            out_line += 1;
        }
        let replacement = match prepared.get(region.name.as_str()) {
            Some(def) => pysrc::indent(def, &region.indent),
            None => stub_text(region),
        };
        let n = replacement.lines().count();
        spans.push((region.name.as_str(), out_line, out_line + n));
        out_line += n;
        out.push_str(&replacement);
        cursor = region.end_line;
    }
    for line in &lines[cursor..] {
        out.push_str(line);
        out.push('\n');
    }
    let class_text = pysrc::normalize_ws(&out);

    let source = ClassSource {
        preamble: pysrc::normalize_ws(&task.preamble),
        class_text,
    };
    if let Err(error) = pysrc::parse_module(&source.class_text) {
        let line = error.line.saturating_sub(1);
        let method = spans
            .iter()
            .filter(|(name, _, _)| prepared.contains_key(name))
            .find(|(_, start, end)| line >= *start && line < *end)
            .or_else(|| {
                spans
                    .iter()
                    .find(|(name, _, _)| prepared.contains_key(name))
            })
            .map(|(name, _, _)| name.to_string())
            .unwrap_or_else(|| task.class_name.clone());
        return Err(AssemblyError::BrokenClass { method, error });
    }
    Ok(source)
}
