//! Subcommand implementations. Each writes its artifacts through an `ArtifactWriter` and ends with a manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use roughfilm::cache::CellCache;
use roughfilm::cell::{
    divergence_residual, energy_product, flux_integral, phi_energy, phi_product, slip_defect, CellProblemSet, CellSolver,
    ScalarCellSolution, VectorCellSolution,
};
use roughfilm::direct::{self, average_pressure, field_table, DirectConfig, DirectState, Diagnostics, Trajectory};
use roughfilm::geometry::{BoundaryLift, RoughnessProfile};
use roughfilm::homogenized::{export_fields, reconstruct};
use roughfilm::output::{csv_table, fmt_f64, sha256_hex, ArtifactWriter, OutputError};
use roughfilm::reynolds::{pressure_table, sample_coefficients, solve_pressure, CoefficientSample, PressureSolution, DUALITY_RTOL};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{sweep_points, ConfigError, Resolved, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVE: i32 = 3;
pub const EXIT_PARTIAL_SWEEP: i32 = 4;

/// Relative tolerance for the h̄-weighted zero-mean check on p⁰.
pub const NORMALIZATION_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Solve(String),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{failed} of {total} sweep points failed")]
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solve(_) | CliError::Output(_) => EXIT_SOLVE,
            CliError::PartialSweep { .. } => EXIT_PARTIAL_SWEEP,
        }
    }

    pub fn to_json(&self) -> Value {
        let kind = match self {
            CliError::Config(_) => "config_invalid",
            CliError::Solve(_) => "solve_failure",
            CliError::Output(_) => "output_failure",
            CliError::PartialSweep { .. } => "partial_sweep_failure",
        };
        let mut err = json!({ "kind": kind, "exit_code": self.exit_code(), "message": self.to_string() });
        if let CliError::Config(ConfigError::Invalid { problems, report }) = self {
            err["problems"] = json!(problems);
            err["violations"] = serde_json::to_value(&report.violations).unwrap_or(Value::Null);
        }
        json!({ "error": err })
    }
}

fn solve_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solve(e.to_string())
}

/// Command-line overrides shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub time_list: Option<Vec<f64>>,
}

/// A loaded config with overrides applied, its hash and the resolved objects.
pub struct Prepared {
    pub config: RunConfig,
    pub resolved: Resolved,
    pub config_sha256: String,
    pub out: PathBuf,
    jobs: usize,
    started: Instant,
}

impl Prepared {
    pub fn new(mut config: RunConfig, opts: &Options) -> Result<Self, CliError> {
        if let Some(t) = &opts.time_list {
            config.times = t.clone();
        }
        let resolved = config.resolve()?;
        let config_sha256 = sha256_hex(config.to_toml().as_bytes());
        let out = opts.out.clone().unwrap_or_else(|| PathBuf::from(&config.output_dir));
        Ok(Prepared { config, resolved, config_sha256, out, jobs: opts.jobs, started: Instant::now() })
    }

    fn cache(&self) -> Option<CellCache> {
        // an unusable cache directory only disables caching
        self.config.cache_dir.as_ref().and_then(|d| CellCache::new(d).ok())
    }

    fn base_parameters(&self) -> BTreeMap<String, Value> {
        let c = &self.config;
        let mut p = BTreeMap::new();
        p.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        p.insert("times".into(), json!(c.times));
        p.insert("cell_mesh".into(), json!([c.cell.n_eta1, c.cell.n_y2]));
        p.insert("delta_c".into(), json!(c.cell.delta_c));
        p.insert("extrapolate".into(), json!(c.cell.extrapolate));
        p.insert("cell_solve_rtol".into(), json!(roughfilm::cell::SOLVE_RTOL));
        p.insert("cg_rtol".into(), json!(roughfilm::linalg::CG_RTOL));
        p
    }

    fn finish(&self, writer: ArtifactWriter, command: &str, extra: BTreeMap<String, Value>) -> Result<(), CliError> {
        let mut params = self.base_parameters();
        params.extend(extra);
        let root = writer.root().to_path_buf();
        writer.finish(command, &self.config_sha256, params)?;
        if !self.config.deterministic {
            let info = json!({
                "command": command,
                "jobs": self.jobs,
                "threads": rayon::current_num_threads(),
                "elapsed_seconds": self.started.elapsed().as_secs_f64(),
            });
            let text = serde_json::to_string_pretty(&info).expect("json") + "\n";
            roughfilm::output::write_file(&root.join("run_info.json"), text.as_bytes())?;
        }
        Ok(())
    }
}

/// Runs `f` on a pool with `jobs` threads (0 = one per core).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(solve_err)?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ValidationSummary {
    pub valid: bool,
    pub config_sha256: String,
    pub warnings: Vec<String>,
}

pub fn cmd_validate(config: RunConfig, opts: &Options) -> Result<ValidationSummary, CliError> {
    let p = Prepared::new(config, opts)?;
    Ok(ValidationSummary { valid: true, config_sha256: p.config_sha256, warnings: p.resolved.warnings })
}

fn vector_table(w: &VectorCellSolution) -> String {
    let s = w.mesh.strip();
    let rows = (0..s.n_nodes()).map(|n| {
        let (x, y) = s.node_coords(n);
        vec![x, y, w.u1[n], w.u2[n]]
    });
    csv_table("eta1,y2,u1,u2", rows)
}

fn scalar_table(z: &ScalarCellSolution) -> String {
    let s = z.mesh.strip();
    let rows = (0..s.n_nodes()).map(|n| {
        let (x, y) = s.node_coords(n);
        vec![x, y, z.values[n]]
    });
    csv_table("eta1,y2,z", rows)
}

/// Named scalar products of one cell set, in a fixed order.
pub fn cell_products(set: &CellProblemSet, profile: &RoughnessProfile, config: &RunConfig) -> Result<Vec<(String, f64)>, CliError> {
    let (nu, nu_r) = (config.fluid.nu, config.fluid.nu_r);
    let e = |a: &VectorCellSolution, b: &VectorCellSolution| energy_product(a, b, profile, nu, nu_r).map_err(solve_err);
    let flux = |w: &VectorCellSolution| flux_integral(w, profile).map_err(solve_err);
    let alpha = phi_energy(profile, set.y1, set.w1.mesh, nu, nu_r).map_err(solve_err)?;
    let mut out = vec![
        ("y1".to_string(), set.y1),
        ("hbar".to_string(), profile.hbar(set.y1)),
        ("A".to_string(), e(&set.w1, &set.w1)?),
        ("A_flux".to_string(), -flux(&set.w1)?),
        ("B".to_string(), e(&set.w1, &set.w2)?),
        ("B_flux".to_string(), -flux(&set.w2)?),
        ("phi_product".to_string(), phi_product(&set.w1, profile, nu, nu_r).map_err(solve_err)?),
        ("phi_energy".to_string(), alpha),
        ("coercivity_floor".to_string(), 1.0 / (36.0 * alpha)),
        ("div_w1".to_string(), divergence_residual(&set.w1, profile).map_err(solve_err)?),
        ("div_w2".to_string(), divergence_residual(&set.w2, profile).map_err(solve_err)?),
        ("slip_w1".to_string(), slip_defect(&set.w1, profile)),
        ("slip_w2".to_string(), slip_defect(&set.w2, profile)),
    ];
    for (k, w) in set.w3.iter().enumerate() {
        out.push((format!("C_t{k:03}"), e(&set.w1, w)?));
        out.push((format!("C_flux_t{k:03}"), -flux(w)?));
    }
    Ok(out)
}

fn products_table(products: &[(String, f64)]) -> String {
    let mut s = String::from("quantity,value\n");
    for (name, v) in products {
        let _ = writeln!(s, "{name},{}", fmt_f64(*v));
    }
    s
}

/// Solves and writes the five cell solutions and their products at one y₁.
pub fn cmd_cell(config: RunConfig, y1: f64, opts: &Options) -> Result<PathBuf, CliError> {
    let p = Prepared::new(config, opts)?;
    let length = p.resolved.profile.length();
    if !(y1.is_finite() && (0.0..=length).contains(&y1)) {
        return Err(ConfigError::Invalid { problems: vec![format!("y1 = {y1} lies outside [0, {length}]")], report: Default::default() }.into());
    }
    let (profile, lift) = (&p.resolved.profile, &p.resolved.lift);
    let set = with_pool(p.jobs, || {
        CellSolver::new(profile, y1, p.config.cell.mesh(), p.config.cell_params())
            .and_then(|s| s.solve_all(lift, &p.config.forcing, &p.config.times))
            .map_err(solve_err)
    })??;
    let products = cell_products(&set, profile, &p.config)?;

    let mut w = ArtifactWriter::new(&p.out)?;
    w.write("cell_w1.csv", vector_table(&set.w1).as_bytes())?;
    w.write("cell_w2.csv", vector_table(&set.w2).as_bytes())?;
    w.write("cell_z1.csv", scalar_table(&set.z1).as_bytes())?;
    for k in 0..set.times.len() {
        w.write(&format!("cell_w3_t{k:03}.csv"), vector_table(&set.w3[k]).as_bytes())?;
        w.write(&format!("cell_z2_t{k:03}.csv"), scalar_table(&set.z2[k]).as_bytes())?;
    }
    w.write("products.csv", products_table(&products).as_bytes())?;
    let mut extra = BTreeMap::new();
    extra.insert("y1".into(), json!(y1));
    p.finish(w, "cell", extra)?;
    Ok(p.out)
}

/// Result of the full limit pipeline at every requested time.
pub struct HomogenizedRun {
    pub sample: CoefficientSample,
    pub pressures: Vec<PressureSolution>,
}

/// Samples coefficients and solves the Reynolds problem for every configured time.
pub fn homogenized_pipeline(config: &RunConfig, resolved: &Resolved, times: &[f64], cache: Option<&CellCache>) -> Result<HomogenizedRun, CliError> {
    let (profile, lift) = (&resolved.profile, &resolved.lift);
    let sample = sample_coefficients(profile, &config.fluid, lift, &config.forcing, times, &config.sampling(), cache).map_err(solve_err)?;
    let mut pressures = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let p = solve_pressure(&sample.coeffs, k, lift.u0.value(t)).map_err(solve_err)?;
        let mean = p.weighted_mean(&sample.coeffs.hbar);
        let scale = p.nodes.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if mean.abs() > NORMALIZATION_RTOL * scale {
            return Err(CliError::Solve(format!("pressure at t={t} violates the zero-mean normalization: mean {mean:e}")));
        }
        pressures.push(p);
    }
    Ok(HomogenizedRun { sample, pressures })
}

fn coefficient_table(run: &HomogenizedRun) -> String {
    let c = &run.sample.coeffs;
    let mut header = String::from("y1,hbar,A,A_flux,B");
    for k in 0..c.times.len() {
        let _ = write!(header, ",C_t{k:03}");
    }
    let rows = (0..c.n()).map(|i| {
        let mut r = vec![c.y1[i], c.hbar[i], c.a[i], c.a_flux[i], c.b[i]];
        r.extend(c.c.iter().map(|ck| ck[i]));
        r
    });
    csv_table(&header, rows)
}

/// Coefficients, pressure and reconstructed fields for every time.
pub fn cmd_homogenize(config: RunConfig, opts: &Options) -> Result<PathBuf, CliError> {
    let p = Prepared::new(config, opts)?;
    let cache = p.cache();
    let run = with_pool(p.jobs, || homogenized_pipeline(&p.config, &p.resolved, &p.config.times, cache.as_ref()))??;
    let (profile, lift) = (&p.resolved.profile, &p.resolved.lift);

    let mut w = ArtifactWriter::new(&p.out)?;
    w.write("coefficients.csv", coefficient_table(&run).as_bytes())?;
    for (k, pr) in run.pressures.iter().enumerate() {
        w.write(&format!("reynolds_t{k:03}.csv"), pressure_table(&run.sample.coeffs, k, pr).as_bytes())?;
        let sol = reconstruct(pr, &run.sample, lift, profile, k).map_err(solve_err)?;
        export_fields(&sol, p.config.export, &mut w, &format!("fields_t{k:03}")).map_err(solve_err)?;
    }
    let c = &run.sample.coeffs;
    let mut extra = BTreeMap::new();
    extra.insert("n_elements".into(), json!(p.config.reynolds.n_elements));
    extra.insert("export_grid".into(), json!(p.config.export));
    extra.insert("duality_rtol".into(), json!(DUALITY_RTOL));
    extra.insert("normalization_rtol".into(), json!(NORMALIZATION_RTOL));
    extra.insert("alpha_bar".into(), json!(c.alpha_bar));
    extra.insert("coercivity_floor_holds".into(), json!(c.coercivity_floor_holds()));
    extra.insert("flux_spread".into(), json!(run.pressures.iter().map(|q| q.flux_spread()).collect::<Vec<_>>()));
    p.finish(w, "homogenize", extra)?;
    Ok(p.out)
}

fn pressure_cells(s: &DirectState) -> String {
    let m = s.mesh;
    let scaled = s.scaled_pressure();
    let cells = m.elements().map(|(ei, ej)| vec![s.t, (ei as f64 + 0.5) * m.hx(), (ej as f64 + 0.5) * m.hy(), scaled[ej * m.nx + ei]]);
    csv_table("t,y1,y2,eps2_p", cells)
}

/// Writes the artifacts of one direct run under `prefix` (empty for the output root).
fn write_direct(w: &mut ArtifactWriter, prefix: &str, traj: &Trajectory, profile: &RoughnessProfile, lift: &BoundaryLift) -> Result<(), CliError> {
    let rows = traj.diagnostics.iter().map(Diagnostics::values);
    w.write(&format!("{prefix}diagnostics.csv"), csv_table(Diagnostics::CSV_HEADER, rows).as_bytes())?;
    let n = traj.integrated();
    let mut row = Vec::new();
    for a in [n.eb_grad, n.dy2, n.dy1, n.l2] {
        row.extend(a);
    }
    row.extend([n.div_sq, n.max_div, n.max_energy]);
    let header = "eb_v1,eb_v2,eb_z,dy2_v1,dy2_v2,dy2_z,dy1_v1,dy1_v2,dy1_z,l2_v1,l2_v2,l2_z,div_sq,max_div,max_energy";
    w.write(&format!("{prefix}integrated.csv"), csv_table(header, [row]).as_bytes())?;
    let avg = average_pressure(&traj.final_state, profile);
    let rows = (0..avg.y1.len()).map(|i| vec![avg.y1[i], avg.hbar[i], avg.values[i]]);
    w.write(&format!("{prefix}averaged_pressure.csv"), csv_table("y1,hbar,P", rows).as_bytes())?;
    w.write(&format!("{prefix}final_fields.csv"), field_table(&traj.final_state, profile, lift).as_bytes())?;
    w.write(&format!("{prefix}final_pressure.csv"), pressure_cells(&traj.final_state).as_bytes())?;
    for (k, s) in traj.snapshots.iter().enumerate() {
        w.write(&format!("{prefix}snapshot_{k:03}.csv"), field_table(s, profile, lift).as_bytes())?;
    }
    Ok(())
}

fn direct_parameters(d: &DirectConfig, length: f64) -> Value {
    json!({
        "eps": d.eps,
        "delta": d.delta(),
        "dt": d.dt,
        "t_end": d.t_end,
        "steady": d.steady,
        "elements_per_period": d.elements_per_period,
        "ny": d.ny,
        "nx": d.periods(length).map(|n| n * d.elements_per_period).unwrap_or(0),
        "solve_rtol": direct::SOLVE_RTOL,
        "blow_up_factor": direct::BLOW_UP_FACTOR,
    })
}

fn require_direct(config: &RunConfig) -> Result<DirectConfig, CliError> {
    config
        .direct
        .clone()
        .ok_or_else(|| ConfigError::Invalid { problems: vec!["this command needs a [direct] section".into()], report: Default::default() }.into())
}

pub fn cmd_direct(config: RunConfig, opts: &Options) -> Result<PathBuf, CliError> {
    let p = Prepared::new(config, opts)?;
    let d = require_direct(&p.config)?;
    let (profile, lift) = (&p.resolved.profile, &p.resolved.lift);
    let traj = with_pool(p.jobs, || direct::run(&d, &p.config.fluid, &p.config.forcing, lift, profile).map_err(solve_err))??;
    let mut w = ArtifactWriter::new(&p.out)?;
    write_direct(&mut w, "", &traj, profile, lift)?;
    let mut extra = BTreeMap::new();
    extra.insert("direct".into(), direct_parameters(&d, profile.length()));
    p.finish(w, "direct", extra)?;
    Ok(p.out)
}

/// One row of the sweep comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub delta: f64,
    pub elements_per_period: usize,
    pub distance: f64,
    pub div_norm_sq: f64,
    pub error: Option<String>,
}

pub const SWEEP_CSV_HEADER: &str = "index,eps,delta,elements_per_period,ok,distance,p0_norm,div_norm_sq";

/// Runs every sweep point against the homogenized reference at the final (or steady) time.
/// Failed points are recorded and the remaining points still run.
pub fn cmd_sweep(config: RunConfig, opts: &Options) -> Result<(PathBuf, Vec<SweepRow>), CliError> {
    let p = Prepared::new(config, opts)?;
    let base = require_direct(&p.config)?;
    let sweep = p.config.sweep.clone().ok_or_else(|| {
        CliError::from(ConfigError::Invalid { problems: vec!["this command needs a [sweep] section".into()], report: Default::default() })
    })?;
    let points = sweep_points(&base, &sweep);
    let (profile, lift) = (&p.resolved.profile, &p.resolved.lift);
    let t_ref = if base.steady { base.steady_time } else { base.t_end };
    let cache = p.cache();

    let (reference, results) = with_pool(p.jobs, || {
        let reference = homogenized_pipeline(&p.config, &p.resolved, &[t_ref], cache.as_ref());
        let results: Vec<Result<Trajectory, String>> = points
            .par_iter()
            .map(|d| direct::run(d, &p.config.fluid, &p.config.forcing, lift, profile).map_err(|e| e.to_string()))
            .collect();
        (reference, results)
    })?;
    let reference = reference?;
    let p0 = &reference.pressures[0];
    let hbar = &reference.sample.coeffs.hbar;
    let p0_norm = {
        let vals = p0.midpoint_values();
        let num: f64 = vals.iter().zip(hbar).map(|(v, h)| h * v * v).sum();
        (num / hbar.iter().sum::<f64>()).sqrt()
    };

    let mut w = ArtifactWriter::new(&p.out)?;
    w.write("reference_reynolds.csv", pressure_table(&reference.sample.coeffs, 0, p0).as_bytes())?;
    let mut rows = Vec::with_capacity(points.len());
    let mut failures = Vec::new();
    for (k, (d, r)) in points.iter().zip(&results).enumerate() {
        let mut row = SweepRow { eps: d.eps, delta: d.delta(), elements_per_period: d.elements_per_period, distance: f64::NAN, div_norm_sq: f64::NAN, error: None };
        match r {
            Ok(traj) => {
                write_direct(&mut w, &format!("point_{k:03}/"), traj, profile, lift)?;
                row.distance = average_pressure(&traj.final_state, profile).distance_to(p0);
                row.div_norm_sq = traj.diagnostics.last().map_or(0.0, |d| d.div_norm_sq);
            }
            Err(e) => {
                failures.push(json!({ "index": k, "eps": d.eps, "delta": d.delta(), "elements_per_period": d.elements_per_period, "error": e }));
                row.error = Some(e.clone());
            }
        }
        rows.push(row);
    }
    let table = rows.iter().enumerate().map(|(k, r)| {
        let ok = if r.error.is_none() { 1.0 } else { 0.0 };
        vec![k as f64, r.eps, r.delta, r.elements_per_period as f64, ok, r.distance, p0_norm, r.div_norm_sq]
    });
    w.write("sweep.csv", csv_table(SWEEP_CSV_HEADER, table).as_bytes())?;
    if !failures.is_empty() {
        let text = serde_json::to_string_pretty(&failures).expect("json") + "\n";
        w.write("failures.json", text.as_bytes())?;
    }
    let mut extra = BTreeMap::new();
    extra.insert("n_elements".into(), json!(p.config.reynolds.n_elements));
    extra.insert("reference_time".into(), json!(t_ref));
    extra.insert(
        "points".into(),
        Value::Array(points.iter().map(|d| direct_parameters(d, profile.length())).collect()),
    );
    p.finish(w, "sweep", extra)?;
    if !failures.is_empty() {
        return Err(CliError::PartialSweep { failed: failures.len(), total: points.len() });
    }
    Ok((p.out, rows))
}

/// Reads a config file; a missing or malformed file is a config error.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    Ok(RunConfig::load(path)?)
}
