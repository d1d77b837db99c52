use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chain::{ChainParams, PositionLaw};
use crate::error::{Error, Result};
use crate::model::{ModelCoefficients, ModelSpec, SpaceKind};
use crate::oracle::GridSpec;
use crate::risk::{BinCount, Observable};
use crate::theory::LsiConstants;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sample,
    SweepH,
    #[serde(rename = "sweep_N", alias = "sweep_n")]
    SweepN,
    Converge,
    LyapunovCheck,
    Oracle,
    Constants,
    Risk,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Sample,
        ExperimentKind::SweepH,
        ExperimentKind::SweepN,
        ExperimentKind::Converge,
        ExperimentKind::LyapunovCheck,
        ExperimentKind::Oracle,
        ExperimentKind::Constants,
        ExperimentKind::Risk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Sample => "sample",
            ExperimentKind::SweepH => "sweep_h",
            ExperimentKind::SweepN => "sweep_N",
            ExperimentKind::Converge => "converge",
            ExperimentKind::LyapunovCheck => "lyapunov_check",
            ExperimentKind::Oracle => "oracle",
            ExperimentKind::Constants => "constants",
            ExperimentKind::Risk => "risk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_dim() -> usize {
    1
}

fn default_init() -> PositionLaw {
    PositionLaw::Gaussian {
        mean: 0.0,
        std: 1.0,
        wrap: false,
    }
}

/// A full experiment description. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; when present it must match the kind given on the command
    /// line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    pub model: ModelSpec,
    /// Optional; when present it must match the model's space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceKind>,
    /// Coefficients that replace the automatically filled ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<ModelCoefficients>,
    #[serde(default = "default_dim")]
    pub d: usize,
    #[serde(alias = "N", default, skip_serializing_if = "Option::is_none")]
    pub n_particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainParams>,
    #[serde(default = "default_init")]
    pub init: PositionLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_h: Option<SweepHSection>,
    #[serde(
        rename = "sweep_N",
        alias = "sweep_n",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub sweep_n: Option<SweepNSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_check: Option<LyapunovSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskSection>,
}

fn default_stride() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    #[serde(default = "default_stride")]
    pub stride: u64,
}

fn default_slope_gate() -> (f64, f64) {
    (1.5, 2.5)
}

fn default_batches() -> usize {
    50
}

fn default_square() -> Observable {
    Observable::Moment { power: 2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepHSection {
    pub hs: Vec<f64>,
    #[serde(default = "default_square")]
    pub observable: Observable,
    pub burn_in: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Accepted range of the fitted log-log slope of |bias| against h.
    #[serde(default = "default_slope_gate")]
    pub slope_gate: (f64, f64),
}

fn default_clamped_square() -> Observable {
    Observable::ClampedSquare { lo: 0.0, hi: 25.0 }
}

fn default_reps() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepNSection {
    pub ns: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_clamped_square")]
    pub observable: Observable,
    #[serde(default)]
    pub bound: BoundInputs,
}

/// Inputs of the entropy-form risk bound that are not measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    #[serde(default = "one")]
    pub r_entropy: f64,
    #[serde(default)]
    pub eta_n: f64,
    #[serde(default = "default_bins50")]
    pub bins: usize,
}

fn one() -> f64 {
    1.0
}

fn default_bins50() -> usize {
    50
}

impl Default for BoundInputs {
    fn default() -> Self {
        BoundInputs {
            r_entropy: 1.0,
            eta_n: 0.0,
            bins: 50,
        }
    }
}

fn default_phase_bins() -> usize {
    20
}

fn default_window() -> (f64, f64) {
    (-4.0, 4.0)
}

fn default_floor_factor() -> f64 {
    2.0
}

fn default_rate_slack() -> f64 {
    0.02
}

fn default_r2() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    pub reps: usize,
    pub stride: u64,
    #[serde(default = "one")]
    pub rho: f64,
    #[serde(default = "default_phase_bins")]
    pub bins: usize,
    #[serde(default = "default_window")]
    pub x_range: (f64, f64),
    #[serde(default = "default_window")]
    pub v_range: (f64, f64),
    #[serde(default = "default_floor_factor")]
    pub floor_factor: f64,
    #[serde(default = "default_rate_slack")]
    pub rate_slack: f64,
    #[serde(default = "default_r2")]
    pub min_r_squared: f64,
    #[serde(default)]
    pub oracle: OracleSection,
}

fn default_draws() -> usize {
    crate::lyapunov::DEFAULT_DRIFT_DRAWS
}

fn default_states() -> usize {
    100
}

fn default_vmax() -> f64 {
    1.0
}

fn default_scale_range() -> (f64, f64) {
    (0.3, 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub hs: Vec<f64>,
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default = "default_draws")]
    pub m_draws: usize,
    /// Torus states: velocity magnitudes uniform on `[0, v_max]`.
    #[serde(default = "default_vmax")]
    pub v_max: f64,
    /// Euclidean states: per-state scales log-uniform on this range.
    #[serde(default = "default_scale_range")]
    pub scale_range: (f64, f64),
}

fn default_beta() -> f64 {
    0.5
}

fn default_tol() -> f64 {
    1e-11
}

fn default_max_iter() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// Also tabulate the Gibbs measure of this many particles (1 to 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gibbs_particles: Option<usize>,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            beta: default_beta(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            grid: None,
            gibbs_particles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    pub rho: f64,
    #[serde(default)]
    pub c1_hat: f64,
    #[serde(default)]
    pub delta_n: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lsi: Option<LsiConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_clamped_square")]
    pub observable: Observable,
    #[serde(default)]
    pub bound: BoundInputs,
    #[serde(default)]
    pub bins: BinCountConfig,
}

/// Histogram bins for the measured entropy surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinCountConfig {
    #[default]
    Default,
    Sturges,
}

impl BinCountConfig {
    pub fn resolve(self, fixed: usize) -> BinCount {
        match self {
            BinCountConfig::Default => BinCount::Fixed(fixed),
            BinCountConfig::Sturges => BinCount::Sturges,
        }
    }
}

fn missing(path: &str, kind: ExperimentKind) -> Error {
    Error::config(path, format!("required for kind {kind}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path.is_empty() { ".".into() } else { path },
                e.into_inner().to_string(),
            )
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(
                path.display().to_string(),
                format!("cannot read config: {e}"),
            )
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn chain(&self, kind: ExperimentKind) -> Result<ChainParams> {
        let c = self.chain.ok_or_else(|| missing("chain", kind))?;
        c.validate()?;
        Ok(c)
    }

    pub fn n_particles(&self, kind: ExperimentKind) -> Result<usize> {
        match self.n_particles {
            Some(0) => Err(Error::config("n_particles", "need at least one particle")),
            Some(n) => Ok(n),
            None => Err(missing("n_particles", kind)),
        }
    }

    /// Checks the fields the chosen kind needs and the cross-field rules.
    pub fn validate_for(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(Error::config(
                    "kind",
                    format!("config says {k}, command line says {kind}"),
                ));
            }
        }
        if let Some(s) = self.space {
            if s != self.model.space_kind() {
                return Err(Error::config("space", "does not match the model's space"));
            }
        }
        if self.d == 0 {
            return Err(Error::config("d", "dimension must be at least 1"));
        }
        if let Some(c) = &self.coefficients {
            c.validate()
                .map_err(|e| Error::config("coefficients", e.to_string()))?;
        }
        use ExperimentKind::*;
        match kind {
            Sample => {
                self.chain(kind)?;
                self.n_particles(kind)?;
            }
            SweepH => {
                let s = self
                    .sweep_h
                    .as_ref()
                    .ok_or_else(|| missing("sweep_h", kind))?;
                self.chain(kind)?;
                self.n_particles(kind)?;
                if s.hs.len() < 2 {
                    return Err(Error::config("sweep_h.hs", "need at least two step sizes"));
                }
            }
            SweepN => {
                let s = self
                    .sweep_n
                    .as_ref()
                    .ok_or_else(|| missing("sweep_N", kind))?;
                self.chain(kind)?;
                if s.ns.is_empty() || s.ns.contains(&0) {
                    return Err(Error::config(
                        "sweep_N.ns",
                        "need positive particle numbers",
                    ));
                }
            }
            Converge => {
                self.converge
                    .as_ref()
                    .ok_or_else(|| missing("converge", kind))?;
                self.chain(kind)?;
                self.n_particles(kind)?;
            }
            LyapunovCheck => {
                let s = self
                    .lyapunov_check
                    .as_ref()
                    .ok_or_else(|| missing("lyapunov_check", kind))?;
                self.chain(kind)?;
                self.n_particles(kind)?;
                if s.hs.is_empty() {
                    return Err(Error::config(
                        "lyapunov_check.hs",
                        "need at least one step size",
                    ));
                }
            }
            Oracle => {}
            Constants => {
                self.constants
                    .as_ref()
                    .ok_or_else(|| missing("constants", kind))?;
                self.chain(kind)?;
            }
            Risk => {
                self.risk.as_ref().ok_or_else(|| missing("risk", kind))?;
                self.chain(kind)?;
                self.n_particles(kind)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"type": "quadratic", "r": 1.0, "s": 0.25},
        "N": 4,
        "chain": {"h": 0.1, "gamma": 1.0, "n_steps": 10, "seed": 1}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.n_particles, Some(4));
        c.validate_for(ExperimentKind::Sample).unwrap();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_field_reports_path() {
        let bad = MINIMAL.replace("\"seed\": 1", "\"seed\": 1, \"sede\": 2");
        match ExperimentConfig::from_json(&bad).unwrap_err() {
            Error::Config { path, .. } => assert!(path.starts_with("chain"), "{path}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn kind_specific_sections_required() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        match c.validate_for(ExperimentKind::SweepH).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "sweep_h"),
            e => panic!("{e}"),
        }
        assert!(c.validate_for(ExperimentKind::Oracle).is_ok());
    }

    #[test]
    fn kind_mismatch_rejected() {
        let c = ExperimentConfig::from_json(&MINIMAL.replacen('{', "{\"kind\": \"oracle\",", 1))
            .unwrap();
        assert!(c.validate_for(ExperimentKind::Sample).is_err());
        assert!(c.validate_for(ExperimentKind::Oracle).is_ok());
    }
}
