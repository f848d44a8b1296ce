use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use protofix_core::MetricsReport;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    /// Aligned text table with per-shot means (and stds when several seeds ran).
    #[default]
    Table,
    /// Full report, every run, as JSON.
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?} (expected table or json)")),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

pub fn render_table(report: &MetricsReport) -> String {
    let summary = report.summary();
    let multi_seed = summary.iter().any(|s| s.seeds > 1);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "acc_base {:.3}%  test {}  correct {}  misclassified {}  initial prototypes {}",
        report.acc_base,
        report.test_count,
        report.correct_count,
        report.misclassified_count,
        report.initial_store_size
    );
    let _ = writeln!(
        out,
        "acc_E {} support samples",
        if report.include_support_in_acc_e { "includes" } else { "excludes" }
    );
    if multi_seed {
        let _ = writeln!(out, "{:>6}  {:>11}  {:>10}  {:>9}  {:>8}", "shots", "acc_E mean", "acc_E std", "For mean", "For std");
        for s in &summary {
            let _ = writeln!(
                out,
                "{:>6}  {:>11}  {:>10}  {:>9}  {:>8}",
                s.shots,
                cell(s.acc_e_mean),
                cell(s.acc_e_std),
                cell(s.forgetting_mean),
                cell(s.forgetting_std)
            );
        }
    } else {
        let _ = writeln!(out, "{:>6}  {:>8}  {:>8}", "shots", "acc_E", "For");
        for s in &summary {
            let _ = writeln!(out, "{:>6}  {:>8}  {:>8}", s.shots, cell(s.acc_e_mean), cell(s.forgetting_mean));
        }
    }
    out
}

pub fn report_to_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_from_json(text: &str) -> Result<MetricsReport> {
    serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))
}

pub fn render(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(report),
        ReportFormat::Json => report_to_json(report),
    }
}

pub fn emit_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<()> {
    fs::write(path, render(report, format)).map_err(|e| Error::io(path, e))
}
