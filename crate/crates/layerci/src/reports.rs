// SPDX-License-Identifier: Apache-2.0

//! Stored build reports and the cold-versus-warm comparison table.
//!
//! Reports live in one directory as `<label>-<timestamp>.json`. A report
//! is *cold* when nothing came from a cache or local state (found and
//! current are zero), and *warm* when every cache lookup hit (missed is
//! zero and found is positive).

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use layerci_core::report::BuildReport;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredReport {
    pub label: String,
    pub timestamp: u64,
    pub report: BuildReport,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no build reports in {0}")]
    NoReports(PathBuf),
    #[error("invalid report label {0:?}")]
    BadLabel(String),
    #[error("{path}: {message}")]
    BadReport { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label.len() <= 64
        && label.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
        && !label.starts_with('.')
}

/// Writes `report` as `<dir>/<label>-<timestamp>.json`.
pub fn write_report(dir: &Path, label: &str, timestamp: u64, report: &BuildReport) -> Result<PathBuf, ReportError> {
    if !valid_label(label) {
        return Err(ReportError::BadLabel(label.into()));
    }
    fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.into(), source })?;
    let path = dir.join(format!("{label}-{timestamp}.json"));
    let stored = StoredReport { label: label.into(), timestamp, report: report.clone() };
    fs::write(&path, layerci_core::canonical_json(&stored))
        .map_err(|source| ReportError::Io { path: path.clone(), source })?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub timestamp: u64,
    pub file: String,
    pub executed_cost: u64,
    pub total_cost: u64,
    pub match_percent: u64,
}

impl ReportRow {
    fn is_cold(r: &BuildReport) -> bool {
        r.found == 0 && r.current == 0 && r.executed_cost > 0
    }

    fn is_warm(r: &BuildReport) -> bool {
        r.found > 0 && r.missed == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Comparison {
    pub cold: String,
    pub warm: String,
    pub cold_executed_cost: u64,
    pub warm_executed_cost: u64,
    /// `round(100·warm/cold)`
    pub warm_percent_of_cold: u64,
    pub warm_is_faster: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportTable {
    /// Ordered by timestamp, then label, then file name.
    pub rows: Vec<ReportRow>,
    pub comparison: Option<Comparison>,
}

/// Loads every `*.json` report in `dir`.
pub fn load_reports(dir: &Path) -> Result<ReportTable, ReportError> {
    let entries = fs::read_dir(dir).map_err(|source| ReportError::Io { path: dir.into(), source })?;
    let mut loaded = Vec::new();
    for entry in entries {
        let path = entry.map_err(|source| ReportError::Io { path: dir.into(), source })?.path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|source| ReportError::Io { path: path.clone(), source })?;
        let stored: StoredReport = serde_json::from_str(&text)
            .map_err(|e| ReportError::BadReport { path: path.clone(), message: e.to_string() })?;
        if let Err(identity) = stored.report.check_identities() {
            return Err(ReportError::BadReport { path, message: format!("violates {identity}") });
        }
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        loaded.push((stored, file));
    }
    if loaded.is_empty() {
        return Err(ReportError::NoReports(dir.into()));
    }
    loaded.sort_by(|(a, fa), (b, fb)| (a.timestamp, &a.label, fa).cmp(&(b.timestamp, &b.label, fb)));

    let name = |s: &StoredReport| format!("{}@{}", s.label, s.timestamp);
    let cold = loaded.iter().rev().find(|(s, _)| ReportRow::is_cold(&s.report));
    let warm = loaded.iter().rev().find(|(s, _)| ReportRow::is_warm(&s.report));
    let comparison = match (cold, warm) {
        (Some((c, _)), Some((w, _))) => {
            let (ce, we) = (c.report.executed_cost, w.report.executed_cost);
            Some(Comparison {
                cold: name(c),
                warm: name(w),
                cold_executed_cost: ce,
                warm_executed_cost: we,
                warm_percent_of_cold: (200 * we as u128 + ce as u128).checked_div(2 * ce as u128).unwrap_or(0) as u64,
                warm_is_faster: we < ce,
            })
        }
        _ => None,
    };
    let rows = loaded
        .into_iter()
        .map(|(s, file)| ReportRow {
            executed_cost: s.report.executed_cost,
            total_cost: s.report.total_cost,
            match_percent: s.report.match_percent(),
            label: s.label,
            timestamp: s.timestamp,
            file,
        })
        .collect();
    Ok(ReportTable { rows, comparison })
}

/// Human-readable table.
pub fn render_table(t: &ReportTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>12} {:>14} {:>11} {:>7}", "label", "timestamp", "executed_cost", "total_cost", "match");
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{:<24} {:>12} {:>14} {:>11} {:>6}%",
            r.label, r.timestamp, r.executed_cost, r.total_cost, r.match_percent
        );
    }
    if let Some(c) = &t.comparison {
        let _ = writeln!(
            out,
            "cold {} vs warm {}: executed_cost {} -> {} ({}% of cold)",
            c.cold, c.warm, c.cold_executed_cost, c.warm_executed_cost, c.warm_percent_of_cold
        );
    }
    out
}
