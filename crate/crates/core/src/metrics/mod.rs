//! Evaluation metrics: generation success, dependency prediction quality
//! and repair cost.
//!
//! Report structs hold unrounded values; `rounded()` gives the published
//! view (two decimals, ties to even). Percentages are in 0..=100.

mod deps;
mod generation;
mod repair;

pub use deps::{
    dep_metrics, method_dep_outcome, method_precision_recall, DepBreakdown, DepOutcome,
    DependencyReport, TaskDepPrediction,
};
pub use generation::{
    score_generation, AuxiliaryScores, GenerationReport, MethodScore, RegimeScores, TaskScore,
};
pub use repair::{repair_stats, repair_stats_from_rounds, RepairReport, CLASS_FAIL_AVG_FORMULA};

use crate::taskmodel::ClassTask;
use crate::tddloop::{GenerationTrace, Strategy, TaskOutcomes};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no prediction for task {0}")]
    MissingTask(String),
    #[error("task {0} appears more than once")]
    DuplicateTask(String),
    #[error("task {task_id}: predicted schedule is not a permutation of its methods: {message}")]
    Schedule { task_id: String, message: String },
    #[error("task {task_id} was generated with {strategy}, which records no repairs")]
    NoRepairData { task_id: String, strategy: Strategy },
}

/// Two decimals, ties to even.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}

pub(crate) fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64 * 100.0
    }
}

/// Interpretation notes embedded in every report.
pub const REPORT_NOTES: [&str; 4] = [
    "partial columns count units with at least one passing private case; the *_textual columns exclude fully passing units",
    "dependency precision and recall are per-method edge-set scores averaged over methods; F1 is their harmonic mean",
    "class_success requires the class-level private suite; class_success_methods_only does not",
    "methods whose repairs are exhausted keep their last usable body in the final class",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub generation: GenerationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependency: Option<DependencyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<RepairReport>,
    pub fallback_tasks: Vec<String>,
    pub aborted_tasks: Vec<String>,
    /// Tasks left out of the dependency metrics for lack of an analysis.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unanalyzed_tasks: Vec<String>,
    pub exhausted_methods: usize,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Report for one strategy over `tasks`. Traces and outcomes of other
    /// strategies are ignored.
    pub fn build(
        strategy: Strategy,
        tasks: &[ClassTask],
        traces: &[GenerationTrace],
        outcomes: &[TaskOutcomes],
    ) -> Result<Self, MetricsError> {
        let traces: Vec<&GenerationTrace> =
            traces.iter().filter(|t| t.strategy == strategy).collect();
        let outcomes: Vec<TaskOutcomes> = outcomes
            .iter()
            .filter(|o| o.strategy == strategy)
            .cloned()
            .collect();
        let generation = score_generation(tasks, &outcomes)?;
        let mut by_task: BTreeMap<&str, &GenerationTrace> = BTreeMap::new();
        for t in &traces {
            if by_task.insert(&t.task_id, t).is_some() {
                return Err(MetricsError::DuplicateTask(t.task_id.clone()));
            }
        }

        let (mut dependency, mut repair, mut unanalyzed) = (None, None, Vec::new());
        if strategy == Strategy::Tdd {
            let mut preds = BTreeMap::new();
            let mut analyzed = Vec::new();
            for task in tasks {
                match by_task
                    .get(task.task_id.as_str())
                    .and_then(|t| t.dep_analysis.as_ref())
                {
                    Some(d) => {
                        preds.insert(
                            task.task_id.clone(),
                            TaskDepPrediction {
                                dep_map: d.result.dep_map.clone(),
                                schedule: d.result.schedule.clone(),
                            },
                        );
                        analyzed.push(task.clone());
                    }
                    None => unanalyzed.push(task.task_id.clone()),
                }
            }
            dependency = Some(dep_metrics(&analyzed, &preds)?);
            let ordered: Vec<GenerationTrace> = tasks
                .iter()
                .filter_map(|t| by_task.get(t.task_id.as_str()).map(|tr| (*tr).clone()))
                .collect();
            repair = Some(repair_stats(&ordered)?);
        }

        let ids = |f: &dyn Fn(&GenerationTrace) -> bool| -> Vec<String> {
            tasks
                .iter()
                .filter(|t| by_task.get(t.task_id.as_str()).is_some_and(|tr| f(tr)))
                .map(|t| t.task_id.clone())
                .collect()
        };
        Ok(Self {
            strategy,
            generation,
            dependency,
            repair,
            fallback_tasks: ids(&|t| t.is_fallback()),
            aborted_tasks: ids(&|t| t.aborted.is_some()),
            unanalyzed_tasks: unanalyzed,
            exhausted_methods: traces
                .iter()
                .flat_map(|t| &t.methods)
                .filter(|m| m.status == crate::tddloop::MethodStatus::Exhausted)
                .count(),
            notes: REPORT_NOTES.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn rounded(&self) -> Self {
        Self {
            generation: self.generation.rounded(),
            dependency: self.dependency.as_ref().map(DependencyReport::rounded),
            repair: self.repair.as_ref().map(RepairReport::rounded),
            ..self.clone()
        }
    }

    /// Aligned text tables of the rounded report.
    pub fn to_text(&self) -> String {
        let r = self.rounded();
        let g = &r.generation;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "== strategy: {} ({} tasks, {} methods) ==",
            r.strategy, g.tasks, g.methods
        );
        table(
            &mut out,
            &[
                "Class Success",
                "Class Partial",
                "Function Success",
                "Function Partial",
            ],
            &[vec![
                f2(g.class_success),
                f2(g.class_partial_success),
                f2(g.fun_success),
                f2(g.fun_partial_success),
            ]],
        );
        table(
            &mut out,
            &[
                "Function Partial (textual)",
                "Class Partial (textual)",
                "Class Success (methods only)",
            ],
            &[vec![
                f2(g.auxiliary.fun_partial_textual),
                f2(g.auxiliary.class_partial_textual),
                f2(g.auxiliary.class_success_methods_only),
            ]],
        );
        let rg = &g.regimes;
        table(
            &mut out,
            &[
                "Method Success (with deps)",
                "Method Success (no deps)",
                "Class Success (with deps)",
                "Class Success (no deps)",
            ],
            &[vec![
                f2(rg.method_success_with_deps),
                f2(rg.method_success_no_deps),
                f2(rg.class_success_with_deps),
                f2(rg.class_success_no_deps),
            ]],
        );
        if let Some(d) = &r.dependency {
            let o = &d.overall;
            table(
                &mut out,
                &[
                    "Exact Match",
                    "Missing Deps",
                    "Extra Deps",
                    "Wrong Deps",
                    "Precision",
                    "Recall",
                    "F1",
                    "Class-level Accuracy",
                    "Fully Correct Tasks",
                    "Topological Order Violations",
                ],
                &[vec![
                    f2(o.exact_match),
                    f2(o.missing),
                    f2(o.extra),
                    f2(o.wrong),
                    f2(o.precision),
                    f2(o.recall),
                    f2(o.f1),
                    f2(d.class_level_accuracy),
                    format!("{}/{}", d.fully_correct_tasks, d.tasks),
                    format!("{}/{}", d.topo_violation_tasks, d.tasks),
                ]],
            );
            let row = |label: &str, b: &DepBreakdown| {
                vec![
                    label.to_string(),
                    b.methods.to_string(),
                    f2(b.exact_match),
                    f2(b.missing),
                    f2(b.extra),
                    f2(b.wrong),
                ]
            };
            table(
                &mut out,
                &[
                    "Regime",
                    "Methods",
                    "Exact Match",
                    "Missing Deps",
                    "Extra Deps",
                    "Wrong Deps",
                ],
                &[row("with-deps", &d.with_deps), row("no-deps", &d.no_deps)],
            );
        }
        if let Some(p) = &r.repair {
            table(
                &mut out,
                &[
                    "Method Avg",
                    "Method Need Repair",
                    "Method Fail Avg",
                    "Class Avg",
                    "Class Need Repair",
                    "Class Fail Avg",
                ],
                &[vec![
                    f2(p.method_avg),
                    format!("{}/{}", p.methods_needing_repair, p.methods),
                    f2(p.method_fail_avg),
                    f2(p.class_avg),
                    format!("{}/{}", p.classes_needing_repair, p.classes),
                    f2(p.class_fail_avg),
                ]],
            );
            let _ = writeln!(out, "Class Fail Avg = {}", p.class_fail_avg_formula);
            let _ = writeln!(
                out,
                "per-method class averages: all classes {}, classes needing repair {}\n",
                f2(p.class_avg_per_method),
                f2(p.class_fail_avg_per_method)
            );
        }
        for (label, list) in [
            ("fallback", &r.fallback_tasks),
            ("aborted", &r.aborted_tasks),
            ("unanalyzed", &r.unanalyzed_tasks),
        ] {
            if !list.is_empty() {
                let _ = writeln!(out, "{label} tasks: {}", list.join(", "));
            }
        }
        if r.exhausted_methods > 0 {
            let _ = writeln!(
                out,
                "exhausted methods (last body kept): {}",
                r.exhausted_methods
            );
        }
        out
    }
}

fn f2(x: f64) -> String {
    format!("{x:.2}")
}

fn table(out: &mut String, headers: &[&str], rows: &[Vec<String>]) {
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| {
            rows.iter()
                .map(|r| r[i].len())
                .chain(std::iter::once(h.len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let _ = writeln!(out, "{}", line(headers.to_vec()));
    let _ = writeln!(
        out,
        "{}",
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-")
    );
    for r in rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
    out.push('\n');
}

/// One metric of the TDD-vs-best-baseline comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub metric: String,
    pub best_baseline: f64,
    pub best_strategy: Strategy,
    pub tdd: f64,
    pub delta: f64,
}

/// TDD against the best baseline, taking the best separately per metric.
/// Needs a TDD report and at least one baseline report.
pub fn compare_with_best_baseline(reports: &[EvalReport]) -> Option<Vec<DeltaEntry>> {
    let rounded: Vec<EvalReport> = reports.iter().map(EvalReport::rounded).collect();
    let tdd = rounded.iter().find(|r| r.strategy == Strategy::Tdd)?;
    let baselines: Vec<&EvalReport> = rounded
        .iter()
        .filter(|r| r.strategy.is_baseline())
        .collect();
    if baselines.is_empty() {
        return None;
    }
    type Getter = fn(&GenerationReport) -> f64;
    let metrics: [(&str, Getter); 4] = [
        ("class_success", |g| g.class_success),
        ("class_partial_success", |g| g.class_partial_success),
        ("fun_success", |g| g.fun_success),
        ("fun_partial_success", |g| g.fun_partial_success),
    ];
    Some(
        metrics
            .iter()
            .map(|(name, get)| {
                // first strategy wins ties, in H, I, C order
                let mut best = baselines[0];
                for b in &baselines[1..] {
                    if get(&b.generation) > get(&best.generation) {
                        best = b;
                    }
                }
                let (base, ours) = (get(&best.generation), get(&tdd.generation));
                DeltaEntry {
                    metric: name.to_string(),
                    best_baseline: base,
                    best_strategy: best.strategy,
                    tdd: ours,
                    delta: round2(ours - base),
                }
            })
            .collect(),
    )
}

pub fn deltas_to_text(deltas: &[DeltaEntry]) -> String {
    let letter = |s: Strategy| match s {
        Strategy::Holistic => "H",
        Strategy::Incremental => "I",
        Strategy::Compositional => "C",
        Strategy::Tdd => "T",
    };
    let mut out = String::from("== TDD vs best baseline ==\n");
    table(
        &mut out,
        &["Metric", "Best Baseline", "TDD (delta)"],
        &deltas
            .iter()
            .map(|d| {
                vec![
                    d.metric.clone(),
                    format!("{} ({})", f2(d.best_baseline), letter(d.best_strategy)),
                    format!("{} ({:+.2})", f2(d.tdd), d.delta),
                ]
            })
            .collect::<Vec<_>>(),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(round2(0.125), 0.12);
        assert_eq!(round2(0.375), 0.38);
        assert_eq!(round2(25.0 / 412.0), 0.06);
        assert_eq!(round2(25.0 / 15.0), 1.67);
        assert_eq!(round2(2.5 / 100.0 * 100.0), 2.5);
    }

    fn report(strategy: Strategy, cs: f64, fs: f64) -> EvalReport {
        EvalReport {
            strategy,
            generation: GenerationReport {
                tasks: 1,
                methods: 1,
                fun_success: fs,
                fun_partial_success: fs,
                class_success: cs,
                class_partial_success: cs,
                auxiliary: Default::default(),
                regimes: Default::default(),
                per_task: vec![],
            },
            dependency: None,
            repair: None,
            fallback_tasks: vec![],
            aborted_tasks: vec![],
            unanalyzed_tasks: vec![],
            exhausted_methods: 0,
            notes: vec![],
        }
    }

    #[test]
    fn best_baseline_is_per_metric() {
        let reports = [
            report(Strategy::Tdd, 68.0, 90.82),
            report(Strategy::Holistic, 47.0, 70.0),
            report(Strategy::Incremental, 46.0, 76.95),
        ];
        let d = compare_with_best_baseline(&reports).unwrap();
        assert_eq!(d[0].best_strategy, Strategy::Holistic);
        assert_eq!(d[0].delta, 21.0);
        assert_eq!(d[2].best_strategy, Strategy::Incremental);
        assert_eq!(d[2].delta, 13.87);
        assert!(deltas_to_text(&d).contains("68.00 (+21.00)"));
        assert!(compare_with_best_baseline(&reports[..1]).is_none());
    }
}
