//! Run configuration: a versioned TOML document, parsed strictly and cross-validated.

use std::path::Path;

use roughfilm::cell::{CellMesh, CellParams, PenaltySpec, DEFAULT_DELTA_C};
use roughfilm::direct::DirectConfig;
use roughfilm::geometry::{
    validate_profile, BoundaryLift, Cutoff, FluidParams, Forcing, Mode, RoughnessProfile, SampleGrid, TimeSignal,
    ValidationReport,
};
use roughfilm::homogenized::GridSpec;
use roughfilm::linalg::SolverChoice;
use roughfilm::reynolds::SamplingSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid config: {}", .problems.join("; "))]
    Invalid { problems: Vec<String>, report: ValidationReport },
}

impl ConfigError {
    fn invalid(problems: Vec<String>) -> Self {
        ConfigError::Invalid { problems, report: ValidationReport::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Constant {
        length: f64,
        h0: f64,
    },
    /// `h0 + a1 cos(2πy₁/L) + a2 cos(2πη₁)`
    TwoScale {
        length: f64,
        h0: f64,
        #[serde(default)]
        a1: f64,
        #[serde(default)]
        a2: f64,
    },
    Modes {
        length: f64,
        mean: f64,
        #[serde(default)]
        modes: Vec<Mode>,
        h_min: f64,
        h_max: f64,
    },
}

impl ProfileSpec {
    pub fn length(&self) -> f64 {
        match *self {
            ProfileSpec::Constant { length, .. } | ProfileSpec::TwoScale { length, .. } | ProfileSpec::Modes { length, .. } => length,
        }
    }

    pub fn build(&self) -> Result<RoughnessProfile, String> {
        let r = match self {
            ProfileSpec::Constant { length, h0 } => RoughnessProfile::constant(*length, *h0),
            ProfileSpec::TwoScale { length, h0, a1, a2 } => RoughnessProfile::two_scale(*length, *h0, *a1, *a2),
            ProfileSpec::Modes { length, mean, modes, h_min, h_max } => {
                RoughnessProfile::from_modes(*length, *mean, modes.clone(), *h_min, *h_max)
            }
        };
        r.map_err(|e| format!("profile: {e}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftSpec {
    #[serde(default)]
    pub u0: TimeSignal,
    #[serde(default)]
    pub w0: TimeSignal,
    /// Defaults to a bump supported on [0, h_min).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_u: Option<Cutoff>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_w: Option<Cutoff>,
}

impl LiftSpec {
    pub fn build(&self, profile: &RoughnessProfile) -> BoundaryLift {
        let mut lift = BoundaryLift::new(profile, self.u0, self.w0);
        if let Some(c) = self.cutoff_u {
            lift.cutoff_u = c;
        }
        if let Some(c) = self.cutoff_w {
            lift.cutoff_w = c;
        }
        lift
    }
}

fn default_cell_n() -> usize {
    32
}

fn default_delta_c() -> f64 {
    DEFAULT_DELTA_C
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    #[serde(default = "default_cell_n")]
    pub n_eta1: usize,
    #[serde(default = "default_cell_n")]
    pub n_y2: usize,
    #[serde(default = "default_delta_c")]
    pub delta_c: f64,
    #[serde(default = "yes")]
    pub extrapolate: bool,
    #[serde(default)]
    pub solver: SolverChoice,
}

impl Default for CellSpec {
    fn default() -> Self {
        CellSpec { n_eta1: 32, n_y2: 32, delta_c: DEFAULT_DELTA_C, extrapolate: true, solver: SolverChoice::Auto }
    }
}

impl CellSpec {
    pub fn mesh(&self) -> CellMesh {
        CellMesh::new(self.n_eta1, self.n_y2)
    }

    pub fn penalty(&self) -> PenaltySpec {
        PenaltySpec { delta_c: self.delta_c, extrapolate: self.extrapolate }
    }
}

fn default_n_elements() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReynoldsSpec {
    /// Number of P1 elements; cells are solved at element midpoints.
    #[serde(default = "default_n_elements")]
    pub n_elements: usize,
}

impl Default for ReynoldsSpec {
    fn default() -> Self {
        ReynoldsSpec { n_elements: default_n_elements() }
    }
}

/// Lists of sweep values; an empty list means "use the `[direct]` value".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub eps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub elements_per_period: Vec<usize>,
}

fn default_output_dir() -> String {
    "out".to_string()
}

fn default_times() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// When set, no volatile `run_info.json` is written so output trees compare byte for byte.
    #[serde(default = "yes")]
    pub deterministic: bool,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<String>,
    pub profile: ProfileSpec,
    #[serde(default)]
    pub fluid: FluidParams,
    #[serde(default)]
    pub lift: LiftSpec,
    #[serde(default)]
    pub forcing: Forcing,
    #[serde(default)]
    pub cell: CellSpec,
    #[serde(default)]
    pub reynolds: ReynoldsSpec,
    #[serde(default)]
    pub export: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct: Option<DirectConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// Everything a command needs, built once from a valid config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub profile: RoughnessProfile,
    pub lift: BoundaryLift,
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sampling(&self) -> SamplingSpec {
        SamplingSpec { n_elements: self.reynolds.n_elements, mesh: self.cell.mesh(), penalty: self.cell.penalty(), solver: self.cell.solver }
    }

    pub fn cell_params(&self) -> CellParams {
        CellParams { fluid: self.fluid, penalty: self.cell.penalty(), solver: self.cell.solver }
    }

    /// Checks every section and the sampled profile invariants.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut problems = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            problems.push(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        problems.extend(self.fluid.check());
        if self.times.is_empty() {
            problems.push("times must not be empty".into());
        }
        if self.times.iter().any(|t| !t.is_finite()) {
            problems.push("times must be finite".into());
        }
        if self.cell.n_eta1 < 2 || self.cell.n_y2 < 2 {
            problems.push("cell mesh needs at least 2 elements per direction".into());
        }
        if !(self.cell.delta_c > 0.0) {
            problems.push(format!("cell.delta_c must be positive, got {}", self.cell.delta_c));
        }
        if self.reynolds.n_elements < 2 {
            problems.push("reynolds.n_elements must be at least 2".into());
        }
        if self.export.n_y1 == 0 || self.export.n_y2 == 0 || self.export.n_eta1 == 0 {
            problems.push("export grid sizes must be positive".into());
        }
        if self.output_dir.is_empty() {
            problems.push("output_dir must not be empty".into());
        }
        let profile = match self.profile.build() {
            Ok(p) => p,
            Err(e) => {
                problems.push(e);
                return Err(ConfigError::invalid(problems));
            }
        };
        let lift = self.lift.build(&profile);
        problems.extend(lift.check(&profile).into_iter().map(|m| format!("lift.{m}")));
        let length = profile.length();
        if let Some(d) = &self.direct {
            if let Err(e) = d.validate(length) {
                problems.push(format!("direct: {e}"));
            }
        }
        if let Some(s) = &self.sweep {
            match &self.direct {
                None => problems.push("sweep requires a [direct] section as its base".into()),
                Some(d) => {
                    if s.eps.is_empty() {
                        problems.push("sweep.eps must not be empty".into());
                    }
                    for cfg in sweep_points(d, s) {
                        if let Err(e) = cfg.validate(length) {
                            problems.push(format!("sweep point eps={} delta={}: {e}", cfg.eps, cfg.delta()));
                        }
                    }
                }
            }
        }
        let report = validate_profile(&profile, SampleGrid::default());
        if !report.is_valid() {
            let mut seen = Vec::new();
            for v in &report.violations {
                if !seen.contains(&v.invariant) {
                    seen.push(v.invariant);
                }
            }
            for inv in seen {
                problems.push(format!("profile violates invariant {}", serde_json::to_string(&inv).unwrap_or_default().trim_matches('"')));
            }
        }
        if !problems.is_empty() {
            return Err(ConfigError::Invalid { problems, report });
        }
        let warnings = roughfilm::cell::forcing_warnings(&self.forcing);
        Ok(Resolved { profile, lift, warnings })
    }
}

/// Sweep points in deterministic order: eps outermost, then delta, then mesh.
pub fn sweep_points(base: &DirectConfig, sweep: &SweepSpec) -> Vec<DirectConfig> {
    let deltas: Vec<Option<f64>> = if sweep.delta.is_empty() { vec![base.delta] } else { sweep.delta.iter().map(|&d| Some(d)).collect() };
    let epps = if sweep.elements_per_period.is_empty() { vec![base.elements_per_period] } else { sweep.elements_per_period.clone() };
    let mut out = Vec::new();
    for &eps in &sweep.eps {
        for &delta in &deltas {
            for &epp in &epps {
                out.push(DirectConfig { eps, delta, elements_per_period: epp, ..base.clone() });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[profile]
kind = "two_scale"
length = 1.0
h0 = 1.0
a1 = 0.1
a2 = 0.2
"#;

    #[test]
    fn minimal_config_resolves() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.cell, CellSpec::default());
        assert_eq!(c.times, vec![0.0]);
        c.resolve().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[fluid]\nnu = 1.0\nalpha = 1.0\nviscosity = 2.0\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let c = RunConfig::from_toml(&MINIMAL.replace("schema_version = 1", "schema_version = 7")).unwrap();
        assert!(matches!(c.resolve(), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn wrong_h_min_names_invariant() {
        let text = r#"
schema_version = 1
[profile]
kind = "modes"
length = 1.0
mean = 1.0
h_min = 0.9
h_max = 1.5
modes = [{ amp = 0.3, fast = 1 }]
"#;
        let err = RunConfig::from_toml(text).unwrap().resolve().unwrap_err();
        match err {
            ConfigError::Invalid { problems, report } => {
                assert!(problems.iter().any(|p| p.contains("lower_bound")), "{problems:?}");
                assert!(!report.is_valid());
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn sweep_needs_direct() {
        let text = format!("{MINIMAL}\n[sweep]\neps = [0.5]\n");
        let err = RunConfig::from_toml(&text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("[direct]"));
    }

    #[test]
    fn sweep_order_is_eps_major() {
        let base = DirectConfig::steady(0.5);
        let s = SweepSpec { eps: vec![0.5, 0.25], delta: vec![1e-2, 1e-3], elements_per_period: vec![] };
        let pts = sweep_points(&base, &s);
        let got: Vec<(f64, f64)> = pts.iter().map(|p| (p.eps, p.delta())).collect();
        assert_eq!(got, vec![(0.5, 1e-2), (0.5, 1e-3), (0.25, 1e-2), (0.25, 1e-3)]);
    }
}
