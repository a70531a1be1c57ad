use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::run::{ConsistencyRow, RowStatus};

/// Exit status for a clean report.
pub const EXIT_OK: i32 = 0;
/// Exit status when a certificate and a simulation disagree.
pub const EXIT_CONSISTENCY: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Sorted by scenario id.
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyReport {
    pub fn new(mut rows: Vec<ConsistencyRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Domain(format!("scenario `{}` appears twice in the batch", r.id)));
            }
        }
        Ok(ConsistencyReport { rows })
    }

    pub fn disagreements(&self) -> impl Iterator<Item = &ConsistencyRow> {
        self.rows.iter().filter(|r| r.status == RowStatus::Disagree)
    }

    pub fn open_questions(&self) -> impl Iterator<Item = &ConsistencyRow> {
        self.rows.iter().filter(|r| r.status == RowStatus::OpenQuestion)
    }

    pub fn exit_code(&self) -> i32 {
        if self.disagreements().next().is_some() {
            EXIT_CONSISTENCY
        } else {
            EXIT_OK
        }
    }
}

fn status(s: RowStatus) -> &'static str {
    match s {
        RowStatus::Agree => "agree",
        RowStatus::Disagree => "DISAGREE",
        RowStatus::OpenQuestion => "open question",
    }
}

/// Human-readable table, machine-readable JSON and the exit status.
pub fn emit_report(report: &ConsistencyReport) -> (String, String, i32) {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:<14} {:<16} {:<10} {:<20} {:<12} {:<10} status",
        "scenario", "model", "predicted", "basis", "simulated", "expected"
    );
    for r in &report.rows {
        let pred = match r.prediction {
            super::run::Prediction::Converge => "converge",
            super::run::Prediction::Collapse => "collapse",
            super::run::Prediction::NoClaim => "-",
        };
        let _ = writeln!(
            t,
            "{:<14} {:<16} {:<10} {:<20} {:<12} {:<10} {}",
            r.id,
            r.model.name(),
            pred,
            if r.basis.is_empty() { "-" } else { &r.basis },
            r.outcome.label(),
            r.expected.map_or("-", |e| e.label()),
            status(r.status)
        );
        for v in &r.violations {
            let _ = writeln!(t, "    violation: {v}");
        }
    }
    for r in report.open_questions() {
        let _ = writeln!(
            t,
            "warning: {} disagrees with the expected outcome (known open question: {})",
            r.id,
            r.open_question.as_deref().unwrap_or("")
        );
    }
    let code = report.exit_code();
    let n_bad = report.disagreements().count();
    let _ = writeln!(t, "{} scenarios, {} disagreements", report.rows.len(), n_bad);
    let json = serde_json::to_string_pretty(report).expect("report is serializable");
    (t, json, code)
}
