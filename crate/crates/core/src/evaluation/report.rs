//! Self-validating evaluation reports and their rendered forms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{DatingLabelMap, Task};
use crate::error::{CoreError, Result};
use crate::models::ProbabilityVector;

use super::ablation::AblationTable;
use super::metrics::{
    confusion_matrix, mean_abs_error, per_decade_accuracy, time_distance_accuracy, topk_accuracy,
    DecadeStat,
};

/// Metrics bundle for one model on one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: Task,
    pub model_id: String,
    pub test_size: usize,
    /// Dating: accuracy per time distance.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub accuracy_at: BTreeMap<u32, f64>,
    /// Dating: mean and population std of the absolute year error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_error: Option<(f64, f64)>,
    /// Context: top-k accuracy per k.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub topk: BTreeMap<usize, f64>,
    /// `[truth][prediction]` counts.
    pub confusion: Vec<Vec<u64>>,
    /// Dating: per-decade exact accuracy.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_decade: BTreeMap<i32, DecadeStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationTable>,
}

impl EvaluationReport {
    /// Monotonicity and bookkeeping audits. Every constructor runs this, so
    /// no invalid report can be serialized.
    pub fn validate(&self) -> Result<()> {
        let mut last = f64::NEG_INFINITY;
        for (&d, &acc) in &self.accuracy_at {
            if acc + 1e-12 < last {
                return Err(CoreError::Evaluation(format!(
                    "accuracy at d={d} ({acc}) decreased from {last}"
                )));
            }
            last = last.max(acc);
        }
        let mut last = f64::NEG_INFINITY;
        for (&k, &acc) in &self.topk {
            if acc + 1e-12 < last {
                return Err(CoreError::Evaluation(format!(
                    "top-{k} accuracy ({acc}) decreased from {last}"
                )));
            }
            last = last.max(acc);
        }
        let total: u64 = self.confusion.iter().flatten().sum();
        if total as usize != self.test_size {
            return Err(CoreError::Evaluation(format!(
                "confusion holds {total} samples, test size is {}",
                self.test_size
            )));
        }
        let trace: u64 = self.confusion.iter().enumerate().map(|(i, row)| row[i]).sum();
        let exact = trace as f64 / total.max(1) as f64;
        if let Some(&acc0) = self.accuracy_at.get(&0) {
            if (exact - acc0).abs() > 1e-9 {
                return Err(CoreError::Evaluation(format!(
                    "confusion trace/total {exact} disagrees with d=0 accuracy {acc0}"
                )));
            }
        }
        if let Some(&top1) = self.topk.get(&1) {
            if (exact - top1).abs() > 1e-9 {
                return Err(CoreError::Evaluation(format!(
                    "confusion trace/total {exact} disagrees with top-1 accuracy {top1}"
                )));
            }
        }
        if let Some((mean, std)) = self.mean_error {
            if !(mean.is_finite() && std.is_finite() && mean >= 0.0 && std >= 0.0) {
                return Err(CoreError::Evaluation(format!("bad mean error ({mean}, {std})")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.validate()?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<EvaluationReport> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let report: EvaluationReport = serde_json::from_str(&text)?;
        report.validate()?;
        Ok(report)
    }
}

/// Build the dating-task report from predicted and true years.
pub fn dating_report(
    model_id: &str,
    pred_years: &[i32],
    true_years: &[i32],
    map: &DatingLabelMap,
    distances: &[u32],
    ablation: Option<AblationTable>,
) -> Result<EvaluationReport> {
    let mut accuracy_at = BTreeMap::new();
    for &d in distances {
        accuracy_at.insert(d, time_distance_accuracy(pred_years, true_years, d)?);
    }
    let to_idx = |years: &[i32]| -> Result<Vec<usize>> {
        years
            .iter()
            .map(|&y| {
                map.index_of(y).ok_or_else(|| {
                    CoreError::Evaluation(format!("year {y} outside the dating label map"))
                })
            })
            .collect()
    };
    let preds = to_idx(pred_years)?;
    let truths = to_idx(true_years)?;
    let report = EvaluationReport {
        task: Task::Dating,
        model_id: model_id.to_string(),
        test_size: true_years.len(),
        accuracy_at,
        mean_error: Some(mean_abs_error(pred_years, true_years)?),
        topk: BTreeMap::new(),
        confusion: confusion_matrix(&preds, &truths, map.num_classes())?,
        per_decade: per_decade_accuracy(pred_years, true_years)?,
        ablation,
    };
    report.validate()?;
    Ok(report)
}

/// Build the context-task report from per-photo probability vectors.
pub fn context_report(
    model_id: &str,
    probs: &[ProbabilityVector],
    truths: &[usize],
    ks: &[usize],
    num_classes: usize,
) -> Result<EvaluationReport> {
    let mut topk = BTreeMap::new();
    for &k in ks {
        topk.insert(k, topk_accuracy(probs, truths, k)?);
    }
    let preds: Vec<usize> = probs.iter().map(|p| p.argmax()).collect();
    let report = EvaluationReport {
        task: Task::Context,
        model_id: model_id.to_string(),
        test_size: truths.len(),
        accuracy_at: BTreeMap::new(),
        mean_error: None,
        topk,
        confusion: confusion_matrix(&preds, truths, num_classes)?,
        per_decade: BTreeMap::new(),
        ablation: None,
    };
    report.validate()?;
    Ok(report)
}

fn fmt_pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Markdown rendering: one accuracy table across models per task, plus the
/// ablation table when present.
pub fn render_markdown(reports: &[&EvaluationReport]) -> String {
    let mut out = String::new();
    let dating: Vec<&&EvaluationReport> = reports.iter().filter(|r| r.task == Task::Dating).collect();
    let context: Vec<&&EvaluationReport> = reports.iter().filter(|r| r.task == Task::Context).collect();

    if !dating.is_empty() {
        out.push_str("## Dating accuracy by time distance\n\n");
        out.push_str("| | ");
        for r in &dating {
            out.push_str(&format!("{} | ", r.model_id));
        }
        out.push('\n');
        out.push_str("|---|");
        out.push_str(&"---|".repeat(dating.len()));
        out.push('\n');
        let mut distances: Vec<u32> = dating
            .iter()
            .flat_map(|r| r.accuracy_at.keys().copied())
            .collect();
        distances.sort_unstable();
        distances.dedup();
        for d in distances {
            out.push_str(&format!("| d = {d} | "));
            for r in &dating {
                match r.accuracy_at.get(&d) {
                    Some(acc) => out.push_str(&format!("{} | ", fmt_pct(*acc))),
                    None => out.push_str("- | "),
                }
            }
            out.push('\n');
        }
        out.push_str("| mean error (d=0) | ");
        for r in &dating {
            match r.mean_error {
                Some((m, s)) => out.push_str(&format!("{m:.2} ± {s:.2} | ")),
                None => out.push_str("- | "),
            }
        }
        out.push_str("\n\n");

        for r in &dating {
            if let Some(table) = &r.ablation {
                out.push_str(&format!(
                    "## Fixed-count ablation (n = {}, model {})\n\n",
                    table.n, r.model_id
                ));
                out.push_str("| k | faces w/o image | faces w/ image | people w/o image | people w/ image | both w/o image | both w/ image |\n");
                out.push_str("|---|---|---|---|---|---|---|\n");
                for row in &table.rows {
                    out.push_str(&format!("| {} |", row.k));
                    for c in row.cells {
                        out.push_str(&format!(" {} |", fmt_pct(c)));
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
        }
    }

    if !context.is_empty() {
        out.push_str("## Context top-k accuracy\n\n");
        out.push_str("| | ");
        for r in &context {
            out.push_str(&format!("{} | ", r.model_id));
        }
        out.push('\n');
        out.push_str("|---|");
        out.push_str(&"---|".repeat(context.len()));
        out.push('\n');
        let mut ks: Vec<usize> = context.iter().flat_map(|r| r.topk.keys().copied()).collect();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            out.push_str(&format!("| top-{k} | "));
            for r in &context {
                match r.topk.get(&k) {
                    Some(acc) => out.push_str(&format!("{} | ", fmt_pct(*acc))),
                    None => out.push_str("- | "),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dating_report_builds_and_validates() {
        let truths = vec![1950, 1951, 1960, 1999, 1930];
        let preds = vec![1950, 1956, 1960, 1990, 1931];
        let map = DatingLabelMap::default();
        let r = dating_report("merged", &preds, &truths, &map, &[0, 5, 10], None).unwrap();
        assert_eq!(r.test_size, 5);
        assert!((r.accuracy_at[&0] - 0.4).abs() < 1e-12);
        assert!(r.accuracy_at[&5] >= r.accuracy_at[&0]);
        assert!(r.accuracy_at[&10] >= r.accuracy_at[&5]);
        r.validate().unwrap();
    }

    #[test]
    fn context_report_builds_and_validates() {
        let probs = vec![
            ProbabilityVector::new(vec![0.7, 0.2, 0.1]).unwrap(),
            ProbabilityVector::new(vec![0.1, 0.6, 0.3]).unwrap(),
        ];
        let r = context_report("image", &probs, &[0, 2], &[1, 2, 3], 3).unwrap();
        assert_eq!(r.topk[&3], 1.0);
        assert!(r.topk[&1] <= r.topk[&2]);
        r.validate().unwrap();
    }

    #[test]
    fn validation_catches_inconsistent_reports() {
        let mut r = EvaluationReport {
            task: Task::Dating,
            model_id: "x".into(),
            test_size: 2,
            accuracy_at: BTreeMap::from([(0, 0.9), (5, 0.4)]),
            mean_error: None,
            topk: BTreeMap::new(),
            confusion: vec![vec![1, 0], vec![0, 1]],
            per_decade: BTreeMap::new(),
            ablation: None,
        };
        assert!(r.validate().is_err()); // non-monotone in d
        r.accuracy_at = BTreeMap::from([(0, 1.0), (5, 1.0)]);
        r.validate().unwrap();
        r.test_size = 3;
        assert!(r.validate().is_err()); // total mismatch
    }

    #[test]
    fn markdown_has_model_columns() {
        let truths = vec![1950, 1960];
        let preds = vec![1950, 1961];
        let map = DatingLabelMap::default();
        let a = dating_report("image", &preds, &truths, &map, &[0, 5], None).unwrap();
        let b = dating_report("merged", &truths, &truths, &map, &[0, 5], None).unwrap();
        let md = render_markdown(&[&a, &b]);
        assert!(md.contains("image"));
        assert!(md.contains("merged"));
        assert!(md.contains("d = 0"));
        assert!(md.contains("mean error"));
    }
}
