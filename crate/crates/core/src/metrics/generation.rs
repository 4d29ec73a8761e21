use super::{round2, MetricsError};
use crate::sandbox::TestOutcome;
use crate::taskmodel::ClassTask;
use crate::tddloop::TaskOutcomes;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub name: String,
    pub has_deps: bool,
    pub passed: usize,
    pub total: usize,
    pub success: bool,
}

impl MethodScore {
    pub fn partial(&self) -> bool {
        self.passed > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub methods: Vec<MethodScore>,
    pub class_suite_pass: bool,
    pub class_success: bool,
    pub class_success_methods_only: bool,
    pub class_partial: bool,
    pub has_dependent_method: bool,
}

/// Readings that differ from the headline columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryScores {
    /// Methods with some but not all private cases passing.
    pub fun_partial_textual: f64,
    /// Tasks with a partially passing method that are not class-successful.
    pub class_partial_textual: f64,
    /// Class success without the class-level suite.
    pub class_success_methods_only: f64,
}

/// Success split by dependency regime.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegimeScores {
    pub methods_with_deps: usize,
    pub methods_no_deps: usize,
    pub method_success_with_deps: f64,
    pub method_success_no_deps: f64,
    /// Classes with at least one method that has dependencies.
    pub classes_with_deps: usize,
    pub classes_no_deps: usize,
    pub class_success_with_deps: f64,
    pub class_success_no_deps: f64,
}

/// Percentages over all methods and tasks of the scored corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub tasks: usize,
    pub methods: usize,
    pub fun_success: f64,
    pub fun_partial_success: f64,
    pub class_success: f64,
    pub class_partial_success: f64,
    pub auxiliary: AuxiliaryScores,
    pub regimes: RegimeScores,
    pub per_task: Vec<TaskScore>,
}

impl GenerationReport {
    pub fn rounded(&self) -> Self {
        let a = &self.auxiliary;
        let g = &self.regimes;
        Self {
            tasks: self.tasks,
            methods: self.methods,
            fun_success: round2(self.fun_success),
            fun_partial_success: round2(self.fun_partial_success),
            class_success: round2(self.class_success),
            class_partial_success: round2(self.class_partial_success),
            auxiliary: AuxiliaryScores {
                fun_partial_textual: round2(a.fun_partial_textual),
                class_partial_textual: round2(a.class_partial_textual),
                class_success_methods_only: round2(a.class_success_methods_only),
            },
            regimes: RegimeScores {
                method_success_with_deps: round2(g.method_success_with_deps),
                method_success_no_deps: round2(g.method_success_no_deps),
                class_success_with_deps: round2(g.class_success_with_deps),
                class_success_no_deps: round2(g.class_success_no_deps),
                ..g.clone()
            },
            per_task: self.per_task.clone(),
        }
    }
}

fn suite_counts(
    suites: Option<&BTreeMap<String, TestOutcome>>,
    id: &str,
    declared: usize,
) -> (usize, usize, bool) {
    match suites.and_then(|s| s.get(id)) {
        Some(o) => (
            o.pass_count(),
            o.cases.len().max(declared),
            o.all_pass() && o.cases.len() >= declared,
        ),
        None => (0, declared, false),
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64 * 100.0
    }
}

/// Scores private-evaluation outcomes. A task or suite without outcomes
/// counts as passing nothing.
pub fn score_generation(
    tasks: &[ClassTask],
    outcomes: &[TaskOutcomes],
) -> Result<GenerationReport, MetricsError> {
    let mut by_task: BTreeMap<&str, &TaskOutcomes> = BTreeMap::new();
    for o in outcomes {
        if by_task.insert(&o.task_id, o).is_some() {
            return Err(MetricsError::DuplicateTask(o.task_id.clone()));
        }
    }
    let mut per_task = Vec::with_capacity(tasks.len());
    for task in tasks {
        let suites = by_task.get(task.task_id.as_str()).map(|o| &o.suites);
        let methods: Vec<MethodScore> = task
            .methods
            .iter()
            .map(|m| {
                let (passed, total, success) = suite_counts(
                    suites,
                    &m.private_suite.suite_id,
                    m.private_suite.case_names.len(),
                );
                MethodScore {
                    name: m.name.clone(),
                    has_deps: !m.gt_deps.is_empty(),
                    passed,
                    total,
                    success,
                }
            })
            .collect();
        let (_, _, class_suite_pass) = suite_counts(
            suites,
            &task.class_private_suite.suite_id,
            task.class_private_suite.case_names.len(),
        );
        let all_methods = methods.iter().all(|m| m.success);
        per_task.push(TaskScore {
            task_id: task.task_id.clone(),
            class_suite_pass,
            class_success: all_methods && class_suite_pass,
            class_success_methods_only: all_methods,
            class_partial: methods.iter().any(MethodScore::partial),
            has_dependent_method: methods.iter().any(|m| m.has_deps),
            methods,
        });
    }

    let methods: Vec<&MethodScore> = per_task.iter().flat_map(|t| &t.methods).collect();
    let nm = methods.len();
    let nt = per_task.len();
    let count_m = |f: &dyn Fn(&MethodScore) -> bool| methods.iter().filter(|m| f(m)).count();
    let count_t = |f: &dyn Fn(&TaskScore) -> bool| per_task.iter().filter(|t| f(t)).count();

    let with_m = count_m(&|m| m.has_deps);
    let with_t = count_t(&|t| t.has_dependent_method);
    Ok(GenerationReport {
        tasks: nt,
        methods: nm,
        fun_success: ratio(count_m(&|m| m.success), nm),
        fun_partial_success: ratio(count_m(&MethodScore::partial), nm),
        class_success: ratio(count_t(&|t| t.class_success), nt),
        class_partial_success: ratio(count_t(&|t| t.class_partial), nt),
        auxiliary: AuxiliaryScores {
            fun_partial_textual: ratio(count_m(&|m| m.partial() && !m.success), nm),
            class_partial_textual: ratio(count_t(&|t| t.class_partial && !t.class_success), nt),
            class_success_methods_only: ratio(count_t(&|t| t.class_success_methods_only), nt),
        },
        regimes: RegimeScores {
            methods_with_deps: with_m,
            methods_no_deps: nm - with_m,
            method_success_with_deps: ratio(count_m(&|m| m.has_deps && m.success), with_m),
            method_success_no_deps: ratio(count_m(&|m| !m.has_deps && m.success), nm - with_m),
            classes_with_deps: with_t,
            classes_no_deps: nt - with_t,
            class_success_with_deps: ratio(
                count_t(&|t| t.has_dependent_method && t.class_success),
                with_t,
            ),
            class_success_no_deps: ratio(
                count_t(&|t| !t.has_dependent_method && t.class_success),
                nt - with_t,
            ),
        },
        per_task,
    })
}
