use super::{round2, MetricsError};
use crate::tddloop::{GenerationTrace, Strategy};
use serde::{Deserialize, Serialize};

/// Formula of the class-level fail average, carried into reports.
pub const CLASS_FAIL_AVG_FORMULA: &str =
    "total repair rounds in classes needing repair / number of methods in those classes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub methods: usize,
    pub total_rounds: u64,
    pub method_avg: f64,
    pub methods_needing_repair: usize,
    /// Mean rounds over methods needing repair (0 when there are none).
    pub method_fail_avg: f64,
    pub classes: usize,
    /// Mean over classes of the summed rounds of their methods.
    pub class_avg: f64,
    pub classes_needing_repair: usize,
    pub class_fail_avg: f64,
    pub class_fail_avg_formula: String,
    /// Mean over classes of the per-method mean rounds within each class.
    pub class_avg_per_method: f64,
    /// The same per-class mean, averaged over classes needing repair.
    pub class_fail_avg_per_method: f64,
}

impl RepairReport {
    pub fn rounded(&self) -> Self {
        Self {
            method_avg: round2(self.method_avg),
            method_fail_avg: round2(self.method_fail_avg),
            class_avg: round2(self.class_avg),
            class_fail_avg: round2(self.class_fail_avg),
            class_avg_per_method: round2(self.class_avg_per_method),
            class_fail_avg_per_method: round2(self.class_fail_avg_per_method),
            class_fail_avg_formula: self.class_fail_avg_formula.clone(),
            ..*self
        }
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-class lists of per-method repair rounds.
pub fn repair_stats_from_rounds(classes: &[Vec<u32>]) -> RepairReport {
    let methods: usize = classes.iter().map(Vec::len).sum();
    let total: u64 = classes.iter().flatten().map(|&r| u64::from(r)).sum();
    let needing = classes.iter().flatten().filter(|&&r| r >= 1).count();
    let failing: Vec<&Vec<u32>> = classes
        .iter()
        .filter(|c| c.iter().any(|&r| r >= 1))
        .collect();
    let class_sum = |c: &Vec<u32>| c.iter().map(|&r| f64::from(r)).sum::<f64>();
    let per_method = |c: &Vec<u32>| mean(class_sum(c), c.len());
    RepairReport {
        methods,
        total_rounds: total,
        method_avg: mean(total as f64, methods),
        methods_needing_repair: needing,
        method_fail_avg: mean(total as f64, needing),
        classes: classes.len(),
        class_avg: mean(classes.iter().map(class_sum).sum(), classes.len()),
        classes_needing_repair: failing.len(),
        class_fail_avg: mean(
            failing.iter().map(|c| class_sum(c)).sum(),
            failing.iter().map(|c| c.len()).sum(),
        ),
        class_fail_avg_formula: CLASS_FAIL_AVG_FORMULA.to_string(),
        class_avg_per_method: mean(classes.iter().map(per_method).sum(), classes.len()),
        class_fail_avg_per_method: mean(failing.iter().map(|c| per_method(c)).sum(), failing.len()),
    }
}

/// Repair-cost statistics of test-driven traces.
pub fn repair_stats(traces: &[GenerationTrace]) -> Result<RepairReport, MetricsError> {
    if let Some(t) = traces.iter().find(|t| t.strategy != Strategy::Tdd) {
        return Err(MetricsError::NoRepairData {
            task_id: t.task_id.clone(),
            strategy: t.strategy,
        });
    }
    let classes: Vec<Vec<u32>> = traces
        .iter()
        .map(|t| t.methods.iter().map(|m| m.repair_rounds()).collect())
        .collect();
    Ok(repair_stats_from_rounds(&classes))
}
