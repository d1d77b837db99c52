//! Collects the summaries under a results directory into `report.txt` and
//! `index.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::{Summary, SUMMARY_FILE};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.txt";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Serialize)]
pub struct IndexEntry {
    /// Experiment directory relative to the report root (`.` for the root).
    pub dir: String,
    pub kind: String,
    pub passed: bool,
    pub gates: usize,
    pub failed_gates: usize,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    /// Seconds since the Unix epoch. The only time-dependent output.
    pub generated_at: u64,
    pub experiments: Vec<IndexEntry>,
    pub passed: bool,
    #[serde(skip)]
    pub lines: Vec<String>,
}

fn summary_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(SUMMARY_FILE).is_file() {
            found.push(dir.clone());
        }
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Reads every `summary.json` under `dir` and writes the text report and the
/// index. Fails when no summary exists or a listed artifact is missing.
pub fn emit_report(dir: &Path) -> Result<Report> {
    if !dir.is_dir() {
        return Err(Error::MissingFiles(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let dirs = summary_dirs(dir)?;
    if dirs.is_empty() {
        return Err(Error::MissingFiles(format!(
            "no {SUMMARY_FILE} under {}",
            dir.display()
        )));
    }
    let mut lines = Vec::new();
    let mut experiments = Vec::new();
    for d in &dirs {
        let path = d.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path)?;
        let summary: Summary = serde_json::from_str(&text).map_err(|e| {
            Error::MissingFiles(format!("{} is not a valid summary: {e}", path.display()))
        })?;
        let missing: Vec<&String> = summary
            .files
            .iter()
            .filter(|f| !d.join(f).is_file())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(format!(
                "{}: missing {}",
                d.display(),
                missing
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        let rel = d.strip_prefix(dir).unwrap_or(d);
        let rel = if rel.as_os_str().is_empty() {
            ".".to_string()
        } else {
            rel.display().to_string()
        };
        let kind = summary.kind.name();
        lines.push(format!("[{rel}] {kind}"));
        if summary.gates.is_empty() {
            lines.push(format!("INFO {kind} no gates declared"));
        }
        for g in &summary.gates {
            lines.push(g.line(kind));
        }
        experiments.push(IndexEntry {
            dir: rel,
            kind: kind.to_string(),
            passed: summary.passed(),
            gates: summary.gates.len(),
            failed_gates: summary.gates.iter().filter(|g| !g.pass).count(),
            files: summary.files.clone(),
        });
    }
    let passed = experiments.iter().all(|e| e.passed);
    lines.push(format!(
        "{} {} of {} experiments passed",
        if passed { "PASS" } else { "FAIL" },
        experiments.iter().filter(|e| e.passed).count(),
        experiments.len()
    ));
    let report = Report {
        generated_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        experiments,
        passed,
        lines,
    };
    fs::write(dir.join(REPORT_FILE), report.lines.join("\n") + "\n")?;
    let index = serde_json::to_string_pretty(&report).map_err(|e| Error::domain(e.to_string()))?;
    fs::write(dir.join(INDEX_FILE), index + "\n")?;
    Ok(report)
}
