//! File-based experiment driver: JSON configs in, CSV tables and JSON
//! summaries out.
//!
//! Every run writes `config.json` (the resolved config) and `summary.json`
//! (the config again, the results and the pass/fail gates) next to its
//! tables. Outputs contain no timestamps; rerunning a config with the same
//! seed reproduces them byte for byte.

pub mod config;
mod experiments;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, ExperimentKind};
pub use report::{emit_report, Report};

use crate::error::{Error, Result};

/// One pass/fail criterion of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Gate {
    /// Passes when `lo ≤ value ≤ hi` (absent bounds are open).
    pub fn within(name: impl Into<String>, value: f64, lo: Option<f64>, hi: Option<f64>) -> Self {
        let pass =
            value.is_finite() && lo.is_none_or(|l| value >= l) && hi.is_none_or(|h| value <= h);
        Gate {
            name: name.into(),
            value,
            lo,
            hi,
            pass,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    /// One line of the text report.
    pub fn line(&self, kind: &str) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let range = match (self.lo, self.hi) {
            (Some(l), Some(h)) => format!(" in [{l}, {h}]"),
            (Some(l), None) => format!(" >= {l}"),
            (None, Some(h)) => format!(" <= {h}"),
            (None, None) => String::new(),
        };
        let detail = self
            .detail
            .as_ref()
            .map(|d| format!(" ({d})"))
            .unwrap_or_default();
        format!(
            "{verdict} {kind} {} = {}{range}{detail}",
            self.name, self.value
        )
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub results: serde_json::Value,
    pub gates: Vec<Gate>,
    /// Files written next to the summary.
    pub files: Vec<String>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

/// Output directory: `--out`, then the config's `output_dir`, then
/// `results/<kind>`.
pub fn resolve_output_dir(
    cli: Option<&Path>,
    config: &ExperimentConfig,
    kind: ExperimentKind,
) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(kind.name()))
}

/// Runs one experiment and writes its files into `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    kind: ExperimentKind,
    out_dir: &Path,
) -> Result<Summary> {
    config.validate_for(kind)?;
    fs::create_dir_all(out_dir)?;
    let mut out = Outputs::new(out_dir);
    let (results, gates) = experiments::dispatch(config, kind, &mut out)?;
    out.write_text(CONFIG_FILE, &config.to_json())?;
    let summary = Summary {
        kind,
        config: config.clone(),
        results,
        gates,
        files: out.files.clone(),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::domain(e.to_string()))?;
    fs::write(out_dir.join(SUMMARY_FILE), text + "\n")?;
    Ok(summary)
}

/// Tracks the files an experiment writes.
pub(crate) struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub(crate) fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub(crate) fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::domain(e.to_string()))?;
        self.write_text(name, &text)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        fs::write(self.dir.join(name), format!("{}\n", text.trim_end()))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_lines() {
        let g = Gate::within("slope", 2.1, Some(1.5), Some(2.5));
        assert!(g.pass);
        assert_eq!(g.line("sweep_h"), "PASS sweep_h slope = 2.1 in [1.5, 2.5]");
        let g = Gate::within("slope", 2.6, Some(1.5), Some(2.5));
        assert!(!g.pass);
        assert!(!Gate::within("x", f64::NAN, None, None).pass);
    }
}
