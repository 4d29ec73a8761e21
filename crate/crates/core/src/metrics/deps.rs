use super::{pct, MetricsError};
use crate::depgraph::{DependencyGraph, Schedule};
use crate::taskmodel::ClassTask;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepOutcome {
    Exact,
    Missing,
    Extra,
    Wrong,
}

fn set(names: &[String]) -> BTreeSet<&str> {
    names.iter().map(String::as_str).collect()
}

/// Order-insensitive comparison of one method's predicted and true dependencies.
pub fn method_dep_outcome(pred: &[String], truth: &[String]) -> DepOutcome {
    let (p, t) = (set(pred), set(truth));
    let missing = t.difference(&p).next().is_some();
    let extra = p.difference(&t).next().is_some();
    match (missing, extra) {
        (false, false) => DepOutcome::Exact,
        (true, false) => DepOutcome::Missing,
        (false, true) => DepOutcome::Extra,
        (true, true) => DepOutcome::Wrong,
    }
}

/// Per-method edge precision and recall; an empty side counts as perfect
/// on the measure it cannot affect.
pub fn method_precision_recall(pred: &[String], truth: &[String]) -> (f64, f64) {
    let (p, t) = (set(pred), set(truth));
    let hit = p.intersection(&t).count() as f64;
    match (p.is_empty(), t.is_empty()) {
        (true, true) => (1.0, 1.0),
        (true, false) => (1.0, 0.0),
        (false, true) => (0.0, 1.0),
        (false, false) => (hit / p.len() as f64, hit / t.len() as f64),
    }
}

/// A model's dependency prediction for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDepPrediction {
    pub dep_map: BTreeMap<String, Vec<String>>,
    pub schedule: Schedule,
}

/// Method-level dependency metrics over some set of methods (percentages).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DepBreakdown {
    pub methods: usize,
    pub exact_match: f64,
    pub missing: f64,
    pub extra: f64,
    pub wrong: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl DepBreakdown {
    fn from_rows(rows: &[(DepOutcome, f64, f64)]) -> Self {
        let n = rows.len();
        if n == 0 {
            return Self::default();
        }
        let count = |o: DepOutcome| rows.iter().filter(|r| r.0 == o).count();
        let p = rows.iter().map(|r| r.1).sum::<f64>() / n as f64;
        let r = rows.iter().map(|r| r.2).sum::<f64>() / n as f64;
        let f1 = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        Self {
            methods: n,
            exact_match: pct(count(DepOutcome::Exact), n),
            missing: pct(count(DepOutcome::Missing), n),
            extra: pct(count(DepOutcome::Extra), n),
            wrong: pct(count(DepOutcome::Wrong), n),
            precision: p * 100.0,
            recall: r * 100.0,
            f1: f1 * 100.0,
        }
    }

    fn rounded(&self) -> Self {
        use super::round2 as r;
        Self {
            methods: self.methods,
            exact_match: r(self.exact_match),
            missing: r(self.missing),
            extra: r(self.extra),
            wrong: r(self.wrong),
            precision: r(self.precision),
            recall: r(self.recall),
            f1: r(self.f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyReport {
    pub tasks: usize,
    pub overall: DepBreakdown,
    /// Mean over tasks of the fraction of exactly predicted methods (%).
    pub class_level_accuracy: f64,
    pub fully_correct_tasks: usize,
    pub topo_violation_tasks: usize,
    pub violating_tasks: Vec<String>,
    /// Methods whose true dependency set is non-empty.
    pub with_deps: DepBreakdown,
    pub no_deps: DepBreakdown,
}

impl DependencyReport {
    pub fn rounded(&self) -> Self {
        Self {
            overall: self.overall.rounded(),
            class_level_accuracy: super::round2(self.class_level_accuracy),
            with_deps: self.with_deps.rounded(),
            no_deps: self.no_deps.rounded(),
            violating_tasks: self.violating_tasks.clone(),
            ..*self
        }
    }
}

/// Dependency-prediction metrics over `tasks`. Every task needs a
/// prediction; a method absent from a predicted map counts as predicting
/// no dependencies. Topological violations check the predicted schedule
/// against the ground-truth graph.
pub fn dep_metrics(
    tasks: &[ClassTask],
    preds: &BTreeMap<String, TaskDepPrediction>,
) -> Result<DependencyReport, MetricsError> {
    let mut all = Vec::new();
    let mut with = Vec::new();
    let mut without = Vec::new();
    let mut accuracy_sum = 0.0;
    let mut fully_correct = 0;
    let mut violating = Vec::new();
    for task in tasks {
        let pred = preds
            .get(&task.task_id)
            .ok_or_else(|| MetricsError::MissingTask(task.task_id.clone()))?;
        let mut exact = 0;
        for m in &task.methods {
            let p = pred.dep_map.get(&m.name).map(Vec::as_slice).unwrap_or(&[]);
            let outcome = method_dep_outcome(p, &m.gt_deps);
            let (prec, rec) = method_precision_recall(p, &m.gt_deps);
            exact += usize::from(outcome == DepOutcome::Exact);
            let row = (outcome, prec, rec);
            all.push(row);
            if m.gt_deps.is_empty() {
                without.push(row);
            } else {
                with.push(row);
            }
        }
        if !task.methods.is_empty() {
            accuracy_sum += exact as f64 / task.methods.len() as f64;
        }
        if exact == task.methods.len() {
            fully_correct += 1;
        }
        let violations = DependencyGraph::ground_truth(task)
            .check_schedule(&pred.schedule)
            .map_err(|e| MetricsError::Schedule {
                task_id: task.task_id.clone(),
                message: e.to_string(),
            })?;
        if !violations.is_empty() {
            violating.push(task.task_id.clone());
        }
    }
    Ok(DependencyReport {
        tasks: tasks.len(),
        overall: DepBreakdown::from_rows(&all),
        class_level_accuracy: if tasks.is_empty() {
            0.0
        } else {
            accuracy_sum / tasks.len() as f64 * 100.0
        },
        fully_correct_tasks: fully_correct,
        topo_violation_tasks: violating.len(),
        violating_tasks: violating,
        with_deps: DepBreakdown::from_rows(&with),
        no_deps: DepBreakdown::from_rows(&without),
    })
}
