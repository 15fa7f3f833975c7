//! Coefficient sampling along y₁ and the periodic homogenized Reynolds equation
//! (A p′)′ = −(U₀ B + C)′ on (0, L) with P1 elements.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::CellCache;
use crate::cell::{
    energy_product, flux_integral, phi_energy, CellBase, CellError, CellMesh, CellParams, CellProblemSet, CellSolver,
    PenaltySpec,
};
use crate::geometry::{BoundaryLift, FluidParams, Forcing, RoughnessProfile};
use crate::linalg::SolverChoice;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReynoldsError {
    #[error("cell solve failed at y1={y1}: {source}")]
    Cell { y1: f64, source: CellError },
    #[error("coefficient A is not positive at y1={y1} (A={a})")]
    SingularSystem { y1: f64, a: f64 },
    #[error("A computed two ways disagrees at y1={y1}: energy {energy}, flux {flux}")]
    DualityMismatch { y1: f64, energy: f64, flux: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Coefficients sampled at the element midpoints of a uniform periodic grid on [0, L).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReynoldsCoefficients {
    pub length: f64,
    pub y1: Vec<f64>,
    /// ā(w¹, w¹)
    pub a: Vec<f64>,
    /// −∫ h w¹₁, the same quantity through the defining equation
    pub a_flux: Vec<f64>,
    /// ā(w¹, w²)
    pub b: Vec<f64>,
    pub times: Vec<f64>,
    /// ā(w¹, w³) per time, per sample
    pub c: Vec<Vec<f64>>,
    pub hbar: Vec<f64>,
    /// max over samples of ā(φ_{y₁}, φ_{y₁})
    pub alpha_bar: f64,
}

impl ReynoldsCoefficients {
    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n() as f64
    }

    /// Builds coefficients directly from per-element values (grid midpoints implied).
    pub fn from_values(length: f64, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, hbar: Vec<f64>) -> Result<Self, ReynoldsError> {
        let n = a.len();
        if n < 2 || b.len() != n || c.len() != n || hbar.len() != n {
            return Err(ReynoldsError::InvalidGrid("coefficient arrays must share a length of at least 2".into()));
        }
        Ok(ReynoldsCoefficients {
            length,
            y1: midpoints(length, n),
            a_flux: a.clone(),
            a,
            b,
            times: vec![0.0],
            c: vec![c],
            hbar,
            alpha_bar: f64::NAN,
        })
    }

    /// A ≥ 1/(36 ᾱ) at every sample.
    pub fn coercivity_floor_holds(&self) -> bool {
        let floor = 1.0 / (36.0 * self.alpha_bar);
        self.a.iter().all(|&a| a >= floor)
    }
}

pub fn midpoints(length: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| length * (i as f64 + 0.5) / n as f64).collect()
}

/// Resolution and solver choices for coefficient sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub n_elements: usize,
    pub mesh: CellMesh,
    pub penalty: PenaltySpec,
    #[serde(default)]
    pub solver: SolverChoice,
}

/// Coefficients plus the cell solutions they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSample {
    pub coeffs: ReynoldsCoefficients,
    pub cells: Vec<CellProblemSet>,
}

/// Relative tolerance for the two evaluations of A.
pub const DUALITY_RTOL: f64 = 1e-6;

/// Solves the cell problems at every element midpoint (in parallel) and forms A, B, C, h̄.
pub fn sample_coefficients(
    profile: &RoughnessProfile,
    fluid: &FluidParams,
    lift: &BoundaryLift,
    forcing: &Forcing,
    times: &[f64],
    spec: &SamplingSpec,
    cache: Option<&CellCache>,
) -> Result<CoefficientSample, ReynoldsError> {
    if spec.n_elements < 2 {
        return Err(ReynoldsError::InvalidGrid(format!("need at least 2 elements, got {}", spec.n_elements)));
    }
    if times.is_empty() {
        return Err(ReynoldsError::InvalidGrid("empty time list".into()));
    }
    let l = profile.length();
    let ys = midpoints(l, spec.n_elements);
    let params = CellParams { fluid: *fluid, penalty: spec.penalty, solver: spec.solver };
    let per_sample: Vec<(CellProblemSet, [f64; 5], Vec<f64>)> = ys
        .par_iter()
        .map(|&y1| sample_one(profile, y1, spec.mesh, &params, lift, forcing, times, cache))
        .collect::<Result<_, _>>()?;

    let mut coeffs = ReynoldsCoefficients {
        length: l,
        y1: ys,
        a: Vec::new(),
        a_flux: Vec::new(),
        b: Vec::new(),
        times: times.to_vec(),
        c: vec![Vec::new(); times.len()],
        hbar: Vec::new(),
        alpha_bar: 0.0,
    };
    let mut cells = Vec::with_capacity(per_sample.len());
    for (set, [a, a_flux, b, hbar, phi], c) in per_sample {
        coeffs.a.push(a);
        coeffs.a_flux.push(a_flux);
        coeffs.b.push(b);
        coeffs.hbar.push(hbar);
        coeffs.alpha_bar = coeffs.alpha_bar.max(phi);
        for (k, ck) in c.into_iter().enumerate() {
            coeffs.c[k].push(ck);
        }
        cells.push(set);
    }
    Ok(CoefficientSample { coeffs, cells })
}

#[allow(clippy::too_many_arguments)]
fn sample_one(
    profile: &RoughnessProfile,
    y1: f64,
    mesh: CellMesh,
    params: &CellParams,
    lift: &BoundaryLift,
    forcing: &Forcing,
    times: &[f64],
    cache: Option<&CellCache>,
) -> Result<(CellProblemSet, [f64; 5], Vec<f64>), ReynoldsError> {
    let wrap = |source: CellError| ReynoldsError::Cell { y1, source };
    let solver = CellSolver::new(profile, y1, mesh, *params).map_err(wrap)?;
    let base = match cache.and_then(|c| c.load(profile, y1, mesh, params, lift)) {
        Some(b) => b,
        None => {
            let b = solver.base(lift).map_err(wrap)?;
            if let Some(c) = cache {
                // a failed cache write only costs a recompute later
                let _ = c.store(profile, y1, mesh, params, lift, &b);
            }
            b
        }
    };
    let CellBase { w1, w2, z1 } = base;
    let (w3, z2) = solver.timed(forcing, times).map_err(wrap)?;
    let (nu, nu_r) = (params.fluid.nu, params.fluid.nu_r);
    let a = energy_product(&w1, &w1, profile, nu, nu_r).map_err(wrap)?;
    let a_flux = -flux_integral(&w1, profile).map_err(wrap)?;
    if !(a > 0.0) {
        return Err(ReynoldsError::SingularSystem { y1, a });
    }
    if (a - a_flux).abs() > DUALITY_RTOL * a.abs() {
        return Err(ReynoldsError::DualityMismatch { y1, energy: a, flux: a_flux });
    }
    let b = energy_product(&w1, &w2, profile, nu, nu_r).map_err(wrap)?;
    let c = w3
        .iter()
        .map(|w| energy_product(&w1, w, profile, nu, nu_r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(wrap)?;
    let phi = phi_energy(profile, y1, mesh, nu, nu_r).map_err(wrap)?;
    let set = CellProblemSet { y1, w1, w2, z1, times: times.to_vec(), w3, z2 };
    Ok((set, [a, a_flux, b, profile.hbar(y1), phi], c))
}

/// Nodal P1 pressure on the periodic grid x_i = i L / n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureSolution {
    pub t: f64,
    pub length: f64,
    pub nodes: Vec<f64>,
    /// ∂p⁰/∂y₁ per element
    pub slopes: Vec<f64>,
    /// q_e = A_e p′_e + U₀ B_e + C_e per element
    pub flux: Vec<f64>,
    /// relative residual of the assembled periodic system after the shift
    pub residual: f64,
}

impl PressureSolution {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n() as f64
    }

    /// Element index containing y₁ (periodic).
    pub fn element_of(&self, y1: f64) -> usize {
        let s = y1.rem_euclid(self.length) / self.spacing();
        (s.floor() as usize).min(self.n() - 1)
    }

    pub fn value_at(&self, y1: f64) -> f64 {
        let n = self.n();
        let s = y1.rem_euclid(self.length) / self.spacing();
        let e = (s.floor() as usize).min(n - 1);
        let r = s - e as f64;
        (1.0 - r) * self.nodes[e] + r * self.nodes[(e + 1) % n]
    }

    pub fn slope_at(&self, y1: f64) -> f64 {
        self.slopes[self.element_of(y1)]
    }

    pub fn midpoint_values(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|e| 0.5 * (self.nodes[e] + self.nodes[(e + 1) % n])).collect()
    }

    /// Σ Δ h̄_e p_mid,e
    pub fn weighted_mean(&self, hbar: &[f64]) -> f64 {
        let d = self.spacing();
        self.midpoint_values().iter().zip(hbar).map(|(p, h)| d * p * h).sum()
    }

    /// (max − min) of the element fluxes relative to max(|q|, 1e-300).
    pub fn flux_spread(&self) -> f64 {
        let (lo, hi) = self.flux.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &q| (l.min(q), h.max(q)));
        let scale = self.flux.iter().fold(0.0f64, |m, q| m.max(q.abs()));
        if scale == 0.0 {
            0.0
        } else {
            (hi - lo) / scale
        }
    }
}

/// Solves ∫ A p′ψ′ = −∫ (U₀ B + C) ψ′ for all periodic ψ: node 0 pinned, tridiagonal
/// elimination, then the h̄-weighted zero-mean shift.
pub fn solve_pressure(coeffs: &ReynoldsCoefficients, time_index: usize, u0: f64) -> Result<PressureSolution, ReynoldsError> {
    let n = coeffs.n();
    if time_index >= coeffs.c.len() {
        return Err(ReynoldsError::InvalidGrid(format!("time index {time_index} out of range")));
    }
    for (e, &a) in coeffs.a.iter().enumerate() {
        if !(a > 0.0 && a.is_finite()) {
            return Err(ReynoldsError::SingularSystem { y1: coeffs.y1[e], a });
        }
    }
    let d = coeffs.spacing();
    let f: Vec<f64> = (0..n).map(|e| u0 * coeffs.b[e] + coeffs.c[time_index][e]).collect();
    let k: Vec<f64> = coeffs.a.iter().map(|a| a / d).collect();
    // row i: -k_{i-1} p_{i-1} + (k_{i-1} + k_i) p_i - k_i p_{i+1} = f_i - f_{i-1}
    let rhs = |i: usize| f[i] - f[(i + n - 1) % n];
    let m = n - 1;
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut r = vec![0.0; m];
    for row in 0..m {
        let i = row + 1;
        diag[row] = k[i - 1] + k[i];
        upper[row] = -k[i];
        r[row] = rhs(i);
    }
    // Thomas elimination; sub-diagonal entry of row i is -k[i-1]
    for row in 1..m {
        let w = -k[row] / diag[row - 1];
        diag[row] -= w * upper[row - 1];
        r[row] -= w * r[row - 1];
    }
    let mut p = vec![0.0; n];
    for row in (0..m).rev() {
        let next = if row + 1 < m { p[row + 2] } else { 0.0 };
        p[row + 1] = (r[row] - upper[row] * next) / diag[row];
    }
    let total_h: f64 = coeffs.hbar.iter().sum::<f64>() * d;
    let mean: f64 = (0..n).map(|e| d * coeffs.hbar[e] * 0.5 * (p[e] + p[(e + 1) % n])).sum::<f64>() / total_h;
    for v in &mut p {
        *v -= mean;
    }
    let slopes: Vec<f64> = (0..n).map(|e| (p[(e + 1) % n] - p[e]) / d).collect();
    let flux: Vec<f64> = (0..n).map(|e| coeffs.a[e] * slopes[e] + f[e]).collect();
    let mut res2 = 0.0;
    let mut rhs2 = 0.0;
    for i in 0..n {
        let (im, ip) = ((i + n - 1) % n, (i + 1) % n);
        let lhs = -k[im] * p[im] + (k[im] + k[i]) * p[i] - k[i] * p[ip];
        res2 += (lhs - rhs(i)).powi(2);
        rhs2 += rhs(i).powi(2);
    }
    let residual = if rhs2 > 0.0 { (res2 / rhs2).sqrt() } else { res2.sqrt() };
    Ok(PressureSolution { t: coeffs.times[time_index], length: coeffs.length, nodes: p, slopes, flux, residual })
}

pub const REYNOLDS_CSV_HEADER: &str = "y1,A,B,C,hbar,p0,dp0_dy1";

/// One row per element midpoint: coefficients, midpoint pressure and slope.
pub fn pressure_table(coeffs: &ReynoldsCoefficients, time_index: usize, p: &PressureSolution) -> String {
    let mid = p.midpoint_values();
    let rows = (0..coeffs.n()).map(|e| {
        vec![coeffs.y1[e], coeffs.a[e], coeffs.b[e], coeffs.c[time_index][e], coeffs.hbar[e], mid[e], p.slopes[e]]
    });
    crate::output::csv_table(REYNOLDS_CSV_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> ReynoldsCoefficients {
        let n = a.len();
        ReynoldsCoefficients::from_values(2.0, a, b, c, vec![1.0; n]).unwrap()
    }

    #[test]
    fn constant_coefficients_give_zero_pressure() {
        let p = solve_pressure(&coeffs(vec![0.3; 8], vec![-0.5; 8], vec![0.2; 8]), 0, 1.7).unwrap();
        assert!(p.nodes.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn zero_data_zero_pressure() {
        let a: Vec<f64> = (0..6).map(|i| 0.2 + 0.05 * i as f64).collect();
        let p = solve_pressure(&coeffs(a, vec![1.0; 6], vec![0.0; 6]), 0, 0.0).unwrap();
        assert!(p.nodes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flux_constant_and_normalized() {
        let n = 16;
        let a: Vec<f64> = (0..n).map(|i| 0.3 + 0.1 * (i as f64).sin()).collect();
        let b: Vec<f64> = (0..n).map(|i| -0.5 - 0.2 * (i as f64 * 0.7).cos()).collect();
        let mut c = coeffs(a, b, vec![0.0; n]);
        c.hbar = (0..n).map(|i| 1.0 + 0.1 * (i as f64).cos()).collect();
        let p = solve_pressure(&c, 0, 1.0).unwrap();
        assert!(p.flux_spread() < 1e-12);
        assert!(p.weighted_mean(&c.hbar).abs() < 1e-14);
        assert!(p.residual < 1e-12);
    }

    #[test]
    fn nonpositive_a_rejected() {
        let r = solve_pressure(&coeffs(vec![0.3, 0.0, 0.2], vec![0.0; 3], vec![0.0; 3]), 0, 1.0);
        assert!(matches!(r, Err(ReynoldsError::SingularSystem { .. })));
    }

    #[test]
    fn interpolation_periodic() {
        let p = PressureSolution {
            t: 0.0,
            length: 1.0,
            nodes: vec![0.0, 1.0, 0.0, -1.0],
            slopes: vec![4.0, -4.0, -4.0, 4.0],
            flux: vec![0.0; 4],
            residual: 0.0,
        };
        assert!((p.value_at(0.125) - 0.5).abs() < 1e-15);
        assert!((p.value_at(0.875) + 0.5).abs() < 1e-15);
        assert!((p.value_at(1.125) - 0.5).abs() < 1e-15);
        assert_eq!(p.slope_at(0.9), 4.0);
    }
}
