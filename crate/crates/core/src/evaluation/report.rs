//! Report files.
//!
//! `metrics.csv`:
//!
//! ```text
//! class,precision,recall,f1
//! N,0.8,0.81,0.8049689440993788
//! ```
//!
//! `confusion.txt`: rows are true classes, columns predictions.
//!
//! ```text
//! true\pred      N      V      S      A      Q
//!         N    161      3      0      1      0
//! ```
//!
//! `sweep.csv`: `tau,accuracy`, one row per threshold, highest first.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::fsutil::write_atomic;

use super::MetricsReport;

pub const METRICS_HEADER: &str = "class,precision,recall,f1";
pub const SWEEP_HEADER: &str = "tau,accuracy";

pub fn format_metrics_csv(report: &MetricsReport) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in &report.per_class {
        writeln!(s, "{},{},{},{}", m.label, m.precision, m.recall, m.f1).expect("string write");
    }
    s
}

pub fn format_confusion(report: &MetricsReport) -> String {
    let m = &report.confusion;
    let width = m
        .counts
        .iter()
        .flatten()
        .max()
        .copied()
        .unwrap_or(0)
        .to_string()
        .len()
        .max(5)
        + 1;
    let mut s = format!("{:>9}", "true\\pred");
    for l in m.taxonomy.labels() {
        write!(s, "{:>width$}", l.code()).expect("string write");
    }
    s.push('\n');
    for (l, row) in m.taxonomy.labels().iter().zip(&m.counts) {
        write!(s, "{:>9}", l.code()).expect("string write");
        for c in row {
            write!(s, "{c:>width$}").expect("string write");
        }
        s.push('\n');
    }
    writeln!(s, "accuracy {} ({}/{})", report.accuracy, m.trace(), m.total()).expect("string write");
    s
}

/// Rows are sorted by descending `tau`.
pub fn format_sweep_csv(rows: &[(f64, f64)]) -> String {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut s = format!("{SWEEP_HEADER}\n");
    for (tau, acc) in sorted {
        writeln!(s, "{tau},{acc}").expect("string write");
    }
    s
}

/// Writes `metrics.csv` and `confusion.txt` into `dir`.
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("metrics.csv"), format_metrics_csv(report).as_bytes())?;
    write_atomic(&dir.join("confusion.txt"), format_confusion(report).as_bytes())
}
