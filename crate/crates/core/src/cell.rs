//! Auxiliary problems on the unit cell Y = [0,1]² (η₁ periodic, y₂ ∈ [0,1]) at a fixed y₁.
//!
//! Scalar unknowns (z¹, z²) vanish at both walls. Vector unknowns (w¹, w², w³) vanish at
//! y₂ = 0 and satisfy the slip relation w₂ = w₁ ∂h/∂η₁ at y₂ = 1 by DOF elimination; the
//! divergence constraint is penalized with a one-point (element-centre) rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{full_dof_indices, DofMap, QuadPoint, ReducedAssembler, StripMesh};
use crate::geometry::{BoundaryLift, Cutoff, FluidParams, Forcing, GeometryError, RoughnessProfile};
use crate::linalg::{dot, CsrMatrix, LinearSolveError, LinearSystem, SolverChoice};

pub const QUAD_ORDER: usize = 3;
pub const DEFAULT_DELTA_C: f64 = 1e-6;
/// Largest accepted normwise backward error of a linear cell solve.
pub const SOLVE_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("assembly produced a non-finite contribution at y1={y1}")]
    AssemblyFailure { y1: f64 },
    #[error("linear solve failed at y1={y1}: {source}")]
    SolveFailure { y1: f64, source: LinearSolveError },
    #[error("linear residual {residual:e} above tolerance at y1={y1}")]
    ResidualTooLarge { y1: f64, residual: f64 },
    #[error("divergence residual {residual:e} exceeds 10x the penalty bound {bound:e} at y1={y1}")]
    ConstraintViolation { y1: f64, residual: f64, bound: f64 },
    #[error("fields live on different meshes or y1 values")]
    MeshMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellMesh {
    pub n_eta1: usize,
    pub n_y2: usize,
}

impl CellMesh {
    pub fn new(n_eta1: usize, n_y2: usize) -> Self {
        CellMesh { n_eta1, n_y2 }
    }

    pub fn square(n: usize) -> Self {
        CellMesh { n_eta1: n, n_y2: n }
    }

    pub fn strip(&self) -> StripMesh {
        StripMesh::new(self.n_eta1, self.n_y2, 1.0)
    }

    pub fn refined(&self) -> Self {
        CellMesh { n_eta1: 2 * self.n_eta1, n_y2: 2 * self.n_y2 }
    }

    pub fn coarsened(&self) -> Self {
        CellMesh { n_eta1: self.n_eta1 / 2, n_y2: self.n_y2 / 2 }
    }
}

/// Divergence penalty δ_c and whether to Richardson-combine solves at δ_c and δ_c/4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub delta_c: f64,
    #[serde(default)]
    pub extrapolate: bool,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        PenaltySpec { delta_c: DEFAULT_DELTA_C, extrapolate: true }
    }
}

impl PenaltySpec {
    pub fn plain(delta_c: f64) -> Self {
        PenaltySpec { delta_c, extrapolate: false }
    }

    pub fn extrapolated(delta_c: f64) -> Self {
        PenaltySpec { delta_c, extrapolate: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCellSolution {
    pub y1: f64,
    pub mesh: CellMesh,
    /// Nodal values, index `j * n_eta1 + i`.
    pub values: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorCellSolution {
    pub y1: f64,
    pub mesh: CellMesh,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub delta_c: f64,
    pub extrapolated: bool,
    /// ‖D̄w‖ with D̄ sampled at element centres.
    pub divergence_residual: f64,
    pub residual: f64,
}

impl ScalarCellSolution {
    pub fn zero(y1: f64, mesh: CellMesh) -> Self {
        ScalarCellSolution { y1, mesh, values: vec![0.0; mesh.strip().n_nodes()], residual: 0.0 }
    }

    pub fn scaled(&self, c: f64) -> Self {
        ScalarCellSolution { values: self.values.iter().map(|v| c * v).collect(), ..self.clone() }
    }

    pub fn value_at(&self, eta1: f64, y2: f64) -> f64 {
        self.mesh.strip().interpolate(&self.values, eta1, y2)
    }
}

impl VectorCellSolution {
    pub fn zero(y1: f64, mesh: CellMesh, delta_c: f64) -> Self {
        let n = mesh.strip().n_nodes();
        VectorCellSolution {
            y1,
            mesh,
            u1: vec![0.0; n],
            u2: vec![0.0; n],
            delta_c,
            extrapolated: false,
            divergence_residual: 0.0,
            residual: 0.0,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        VectorCellSolution {
            u1: self.u1.iter().map(|v| c * v).collect(),
            u2: self.u2.iter().map(|v| c * v).collect(),
            divergence_residual: c.abs() * self.divergence_residual,
            ..self.clone()
        }
    }

    pub fn value_at(&self, eta1: f64, y2: f64) -> [f64; 2] {
        let s = self.mesh.strip();
        [s.interpolate(&self.u1, eta1, y2), s.interpolate(&self.u2, eta1, y2)]
    }
}

/// Fields the energy product accepts.
pub trait CellField {
    fn y1(&self) -> f64;
    fn mesh(&self) -> CellMesh;
    fn components(&self) -> Vec<&[f64]>;
    /// Multiplier of the scalar form in the product: ν+ν_r for vector fields, 1 for scalar ones.
    fn weight(nu: f64, nu_r: f64) -> f64;
}

impl CellField for ScalarCellSolution {
    fn y1(&self) -> f64 {
        self.y1
    }
    fn mesh(&self) -> CellMesh {
        self.mesh
    }
    fn components(&self) -> Vec<&[f64]> {
        vec![&self.values]
    }
    fn weight(_: f64, _: f64) -> f64 {
        1.0
    }
}

impl CellField for VectorCellSolution {
    fn y1(&self) -> f64 {
        self.y1
    }
    fn mesh(&self) -> CellMesh {
        self.mesh
    }
    fn components(&self) -> Vec<&[f64]> {
        vec![&self.u1, &self.u2]
    }
    fn weight(nu: f64, nu_r: f64) -> f64 {
        nu + nu_r
    }
}

#[derive(Debug, Clone, Copy)]
struct PointGeom {
    h: f64,
    h_eta: f64,
    /// second coefficient of b̄·∇
    c2: f64,
}

impl PointGeom {
    fn at(profile: &RoughnessProfile, y1: f64, eta1: f64, y2: f64) -> Result<Self, GeometryError> {
        let h = profile.eval(y1, eta1);
        if !(h > 0.0) {
            return Err(GeometryError::DegenerateGap { y1, eta1, h });
        }
        let h_eta = profile.d_deta1(y1, eta1);
        Ok(PointGeom { h, h_eta, c2: -y2 * h_eta / h })
    }

    fn bgrad(&self, gx: f64, gy: f64) -> f64 {
        gx + self.c2 * gy
    }

    /// Integrand of a_{y₁} for gradients (ax, ay), (bx, by).
    fn form(&self, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
        self.h * self.bgrad(ax, ay) * self.bgrad(bx, by) + ay * by / self.h
    }
}

/// (value, ∂η, ∂y) of the cell lift s ↦ c(h(y₁,η₁) s) at (η₁, y₂).
fn lift_eval(c: &Cutoff, g: &PointGeom, y2: f64) -> (f64, f64, f64) {
    let d = c.derivative(g.h * y2);
    (c.value(g.h * y2), d * y2 * g.h_eta, d * g.h)
}

fn scalar_map(s: &StripMesh) -> DofMap {
    DofMap::build(s.n_nodes(), 1, |_, node| {
        let j = node / s.nx;
        if j == 0 || j == s.ny {
            None
        } else {
            Some(None)
        }
    })
}

fn vector_map(profile: &RoughnessProfile, y1: f64, s: &StripMesh) -> DofMap {
    DofMap::build(s.n_nodes(), 2, |c, node| {
        let (i, j) = (node % s.nx, node / s.nx);
        match (c, j) {
            (_, 0) => None,
            (1, j) if j == s.ny => Some(Some((0, profile.d_deta1(y1, s.x(i))))),
            _ => Some(None),
        }
    })
}

fn check_finite(local: &[f64], y1: f64) -> Result<(), CellError> {
    if local.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CellError::AssemblyFailure { y1 })
    }
}

fn scalar_local(profile: &RoughnessProfile, y1: f64, s: &StripMesh, ei: usize, ej: usize) -> Result<[f64; 16], CellError> {
    let mut k = [0.0; 16];
    for q in s.quad_points(ei, ej, QUAD_ORDER) {
        let g = PointGeom::at(profile, y1, q.x, q.y)?;
        for a in 0..4 {
            for b in 0..4 {
                k[a * 4 + b] += q.weight * g.form(q.dx[a], q.dy[a], q.dx[b], q.dy[b]);
            }
        }
    }
    check_finite(&k, y1)?;
    Ok(k)
}

/// Assembled a_{y₁} on the Dirichlet-constrained scalar space.
pub struct ScalarForm {
    pub matrix: CsrMatrix,
    pub map: DofMap,
}

pub fn assemble_scalar_form(profile: &RoughnessProfile, y1: f64, mesh: CellMesh) -> Result<ScalarForm, CellError> {
    let s = mesh.strip();
    let map = scalar_map(&s);
    let mut asm = ReducedAssembler::new(&map);
    for (ei, ej) in s.elements() {
        let k = scalar_local(profile, y1, &s, ei, ej)?;
        asm.add_local(&full_dof_indices(&s, &s.element_nodes(ei, ej), 1), &k);
    }
    let matrix = asm.finish();
    Ok(ScalarForm { matrix, map })
}

/// Assembles ∫ (s0 ψ + sx ∂ψ/∂η₁ + sy ∂ψ/∂y₂) per component into a reduced load vector.
fn assemble_load(
    profile: &RoughnessProfile,
    y1: f64,
    s: &StripMesh,
    map: &DofMap,
    integrand: impl Fn(&QuadPoint, &PointGeom) -> [[f64; 3]; 2],
) -> Result<Vec<f64>, CellError> {
    let nn = s.n_nodes();
    let mut full = vec![0.0; map.n_comp * nn];
    for (ei, ej) in s.elements() {
        let nodes = s.element_nodes(ei, ej);
        for q in s.quad_points(ei, ej, QUAD_ORDER) {
            let g = PointGeom::at(profile, y1, q.x, q.y)?;
            let f = integrand(&q, &g);
            for c in 0..map.n_comp {
                for k in 0..4 {
                    full[c * nn + nodes[k]] += q.weight * (f[c][0] * q.n[k] + f[c][1] * q.dx[k] + f[c][2] * q.dy[k]);
                }
            }
        }
    }
    check_finite(&full, y1)?;
    Ok(map.restrict(&full))
}

/// Factorized scalar cell operator, reusable across right-hand sides.
pub struct ScalarSystem {
    y1: f64,
    mesh: CellMesh,
    map: DofMap,
    system: LinearSystem,
}

impl ScalarSystem {
    pub fn new(profile: &RoughnessProfile, y1: f64, mesh: CellMesh, solver: SolverChoice) -> Result<Self, CellError> {
        let form = assemble_scalar_form(profile, y1, mesh)?;
        let system = LinearSystem::new(form.matrix, solver, true).map_err(|source| CellError::SolveFailure { y1, source })?;
        Ok(ScalarSystem { y1, mesh, map: form.map, system })
    }

    fn solve(&self, load: &[f64]) -> Result<ScalarCellSolution, CellError> {
        let y1 = self.y1;
        let (x, stats) = self.system.solve(load).map_err(|source| CellError::SolveFailure { y1, source })?;
        if stats.backward_error > SOLVE_RTOL {
            return Err(CellError::ResidualTooLarge { y1, residual: stats.backward_error });
        }
        Ok(ScalarCellSolution { y1, mesh: self.mesh, values: self.map.expand(&x), residual: stats.backward_error })
    }

    /// z¹: a(z¹, ψ) = −a(𝒲(h y₂), ψ).
    pub fn z1(&self, profile: &RoughnessProfile, lift: &BoundaryLift) -> Result<ScalarCellSolution, CellError> {
        let s = self.mesh.strip();
        let load = assemble_load(profile, self.y1, &s, &self.map, |q, g| {
            let (_, wx, wy) = lift_eval(&lift.cutoff_w, g, q.y);
            let bw = g.bgrad(wx, wy);
            [[0.0, -g.h * bw, -(g.h * bw * g.c2 + wy / g.h)], [0.0; 3]]
        })?;
        self.solve(&load)
    }

    /// z²: α a(z², ψ) = ∫ g h ψ.
    pub fn z2(&self, profile: &RoughnessProfile, t: f64, forcing: &Forcing, alpha: f64) -> Result<ScalarCellSolution, CellError> {
        if !(alpha > 0.0) {
            return Err(CellError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        let (l, y1) = (profile.length(), self.y1);
        let s = self.mesh.strip();
        let load = assemble_load(profile, y1, &s, &self.map, |q, g| {
            [[forcing.g(l, t, y1, q.y, q.x) * g.h / alpha, 0.0, 0.0], [0.0; 3]]
        })?;
        self.solve(&load)
    }
}

fn vector_local(
    profile: &RoughnessProfile,
    y1: f64,
    s: &StripMesh,
    ei: usize,
    ej: usize,
    nu_sum: f64,
    delta: f64,
) -> Result<[f64; 64], CellError> {
    let ks = scalar_local(profile, y1, s, ei, ej)?;
    let mut k = [0.0; 64];
    for c in 0..2 {
        for a in 0..4 {
            for b in 0..4 {
                k[(c * 4 + a) * 8 + c * 4 + b] = nu_sum * ks[a * 4 + b];
            }
        }
    }
    let q = s.center_point(ei, ej);
    let d = center_divergence_weights(profile, y1, &q)?;
    for a in 0..8 {
        for b in 0..8 {
            k[a * 8 + b] += q.weight * d[a] * d[b] / delta;
        }
    }
    check_finite(&k, y1)?;
    Ok(k)
}

/// Coefficients of D̄w = h ∂w₁/∂η₁ − y₂ h_η ∂w₁/∂y₂ + ∂w₂/∂y₂ against the 8 local DOFs.
fn center_divergence_weights(profile: &RoughnessProfile, y1: f64, q: &QuadPoint) -> Result<[f64; 8], CellError> {
    let g = PointGeom::at(profile, y1, q.x, q.y)?;
    let mut d = [0.0; 8];
    for k in 0..4 {
        d[k] = g.h * g.bgrad(q.dx[k], q.dy[k]);
        d[4 + k] = q.dy[k];
    }
    Ok(d)
}

struct VectorSystem {
    delta: f64,
    system: LinearSystem,
}

/// Factorized vector cell operator(s) ā + (1/δ_c)(D̄·, D̄·); two factorizations when extrapolating.
pub struct VectorSolver {
    y1: f64,
    mesh: CellMesh,
    nu_sum: f64,
    penalty: PenaltySpec,
    map: DofMap,
    systems: Vec<VectorSystem>,
}

impl VectorSolver {
    pub fn new(
        profile: &RoughnessProfile,
        y1: f64,
        mesh: CellMesh,
        nu: f64,
        nu_r: f64,
        penalty: PenaltySpec,
        solver: SolverChoice,
    ) -> Result<Self, CellError> {
        let nu_sum = nu + nu_r;
        if !(nu_sum > 0.0) {
            return Err(CellError::InvalidParameter(format!("nu + nu_r must be positive, got {nu_sum}")));
        }
        if !(penalty.delta_c > 0.0) {
            return Err(CellError::InvalidParameter(format!("delta_c must be positive, got {}", penalty.delta_c)));
        }
        let s = mesh.strip();
        let map = vector_map(profile, y1, &s);
        let deltas = if penalty.extrapolate { vec![penalty.delta_c, penalty.delta_c / 4.0] } else { vec![penalty.delta_c] };
        let mut systems = Vec::new();
        for delta in deltas {
            let mut asm = ReducedAssembler::new(&map);
            for (ei, ej) in s.elements() {
                let k = vector_local(profile, y1, &s, ei, ej, nu_sum, delta)?;
                asm.add_local(&full_dof_indices(&s, &s.element_nodes(ei, ej), 2), &k);
            }
            let system =
                LinearSystem::new(asm.finish(), solver, false).map_err(|source| CellError::SolveFailure { y1, source })?;
            systems.push(VectorSystem { delta, system });
        }
        Ok(VectorSolver { y1, mesh, nu_sum, penalty, map, systems })
    }

    /// The assembled reduced operator at the primary δ_c.
    pub fn matrix(&self) -> &CsrMatrix {
        self.systems[0].system.matrix()
    }

    fn solve(&self, profile: &RoughnessProfile, load: &[f64]) -> Result<VectorCellSolution, CellError> {
        let y1 = self.y1;
        let mut sols = Vec::new();
        let mut residual = 0.0f64;
        for vs in &self.systems {
            let (x, stats) = vs.system.solve(load).map_err(|source| CellError::SolveFailure { y1, source })?;
            if stats.backward_error > SOLVE_RTOL {
                return Err(CellError::ResidualTooLarge { y1, residual: stats.backward_error });
            }
            residual = residual.max(stats.backward_error);
            sols.push(x);
        }
        let work = dot(load, &sols[0]).abs();
        let x = if sols.len() == 2 {
            sols[1].iter().zip(&sols[0]).map(|(q, p)| (4.0 * q - p) / 3.0).collect()
        } else {
            sols.pop().unwrap()
        };
        let full = self.map.expand(&x);
        let nn = self.mesh.strip().n_nodes();
        let mut sol = VectorCellSolution {
            y1,
            mesh: self.mesh,
            u1: full[..nn].to_vec(),
            u2: full[nn..].to_vec(),
            delta_c: self.systems[0].delta,
            extrapolated: self.penalty.extrapolate,
            divergence_residual: 0.0,
            residual,
        };
        sol.divergence_residual = divergence_residual(&sol, profile)?;
        // energy identity: ā(w,w) + (1/δ)‖D̄w‖² = ℓ(w) ⇒ ‖D̄w‖ ≤ √(δ ℓ(w))
        let bound = (self.systems[0].delta * work).sqrt();
        if sol.divergence_residual > 10.0 * bound + 1e-300 {
            return Err(CellError::ConstraintViolation { y1, residual: sol.divergence_residual, bound });
        }
        Ok(sol)
    }

    /// w¹: ā(w¹, φ) = −∫ h φ₁.
    pub fn w1(&self, profile: &RoughnessProfile) -> Result<VectorCellSolution, CellError> {
        let s = self.mesh.strip();
        let load = assemble_load(profile, self.y1, &s, &self.map, |_, g| [[-g.h, 0.0, 0.0], [0.0; 3]])?;
        self.solve(profile, &load)
    }

    /// w²: ā(w², φ) = −(ν+ν_r) a(𝒰(h y₂), φ₁).
    pub fn w2(&self, profile: &RoughnessProfile, lift: &BoundaryLift) -> Result<VectorCellSolution, CellError> {
        let s = self.mesh.strip();
        let m = self.nu_sum;
        let load = assemble_load(profile, self.y1, &s, &self.map, |q, g| {
            let (_, ux, uy) = lift_eval(&lift.cutoff_u, g, q.y);
            let bu = g.bgrad(ux, uy);
            [[0.0, -m * g.h * bu, -m * (g.h * bu * g.c2 + uy / g.h)], [0.0; 3]]
        })?;
        self.solve(profile, &load)
    }

    /// w³: ā(w³, φ) = ∫ f h φ₁ (the second force component does not enter).
    pub fn w3(&self, profile: &RoughnessProfile, t: f64, forcing: &Forcing) -> Result<VectorCellSolution, CellError> {
        let (l, y1) = (profile.length(), self.y1);
        let s = self.mesh.strip();
        let load = assemble_load(profile, y1, &s, &self.map, |q, g| {
            [[forcing.f1.value(l, t, y1, q.y, q.x) * g.h, 0.0, 0.0], [0.0; 3]]
        })?;
        self.solve(profile, &load)
    }
}

pub fn solve_z1(profile: &RoughnessProfile, y1: f64, lift: &BoundaryLift, mesh: CellMesh) -> Result<ScalarCellSolution, CellError> {
    ScalarSystem::new(profile, y1, mesh, SolverChoice::Auto)?.z1(profile, lift)
}

pub fn solve_z2(
    profile: &RoughnessProfile,
    y1: f64,
    t: f64,
    forcing: &Forcing,
    alpha: f64,
    mesh: CellMesh,
) -> Result<ScalarCellSolution, CellError> {
    ScalarSystem::new(profile, y1, mesh, SolverChoice::Auto)?.z2(profile, t, forcing, alpha)
}

pub fn solve_w1(
    profile: &RoughnessProfile,
    y1: f64,
    nu: f64,
    nu_r: f64,
    mesh: CellMesh,
    penalty: PenaltySpec,
) -> Result<VectorCellSolution, CellError> {
    VectorSolver::new(profile, y1, mesh, nu, nu_r, penalty, SolverChoice::Auto)?.w1(profile)
}

pub fn solve_w2(
    profile: &RoughnessProfile,
    y1: f64,
    lift: &BoundaryLift,
    nu: f64,
    nu_r: f64,
    mesh: CellMesh,
    penalty: PenaltySpec,
) -> Result<VectorCellSolution, CellError> {
    VectorSolver::new(profile, y1, mesh, nu, nu_r, penalty, SolverChoice::Auto)?.w2(profile, lift)
}

#[allow(clippy::too_many_arguments)]
pub fn solve_w3(
    profile: &RoughnessProfile,
    y1: f64,
    t: f64,
    forcing: &Forcing,
    nu: f64,
    nu_r: f64,
    mesh: CellMesh,
    penalty: PenaltySpec,
) -> Result<VectorCellSolution, CellError> {
    VectorSolver::new(profile, y1, mesh, nu, nu_r, penalty, SolverChoice::Auto)?.w3(profile, t, forcing)
}

/// Integrates `f(q, geometry)` over Y with the 3×3 rule.
fn integrate(
    profile: &RoughnessProfile,
    y1: f64,
    mesh: CellMesh,
    f: impl Fn(&QuadPoint, &[usize; 4], &PointGeom) -> f64,
) -> Result<f64, CellError> {
    let s = mesh.strip();
    let mut total = 0.0;
    for (ei, ej) in s.elements() {
        let nodes = s.element_nodes(ei, ej);
        for q in s.quad_points(ei, ej, QUAD_ORDER) {
            let g = PointGeom::at(profile, y1, q.x, q.y)?;
            total += q.weight * f(&q, &nodes, &g);
        }
    }
    Ok(total)
}

/// ā(a, b) for vector fields, a(a, b) for scalar fields.
pub fn energy_product<F: CellField>(a: &F, b: &F, profile: &RoughnessProfile, nu: f64, nu_r: f64) -> Result<f64, CellError> {
    if a.mesh() != b.mesh() || a.y1() != b.y1() {
        return Err(CellError::MeshMismatch);
    }
    let (ca, cb) = (a.components(), b.components());
    let w = F::weight(nu, nu_r);
    let v = integrate(profile, a.y1(), a.mesh(), |q, nodes, g| {
        ca.iter()
            .zip(&cb)
            .map(|(fa, fb)| {
                let (_, ax, ay) = q.eval(nodes, fa);
                let (_, bx, by) = q.eval(nodes, fb);
                g.form(ax, ay, bx, by)
            })
            .sum()
    })?;
    Ok(w * v)
}

/// φ_{y₁} = ((−y₂+y₂²)/h, h_η y₂²(y₂−1)/h) with its gradient `[[∂η φ₁, ∂y φ₁], [∂η φ₂, ∂y φ₂]]`.
pub fn phi_field(profile: &RoughnessProfile, y1: f64, eta1: f64, y2: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let h = profile.eval(y1, eta1);
    let he = profile.d_deta1(y1, eta1);
    let hee = profile.d2_deta1(y1, eta1);
    let p = y2 * y2 - y2;
    let c = y2 * y2 * y2 - y2 * y2;
    let v = [p / h, he * c / h];
    let g = [[-p * he / (h * h), (2.0 * y2 - 1.0) / h], [(hee / h - he * he / (h * h)) * c, he * (3.0 * y2 * y2 - 2.0 * y2) / h]];
    (v, g)
}

/// ā(w, φ_{y₁}).
pub fn phi_product(w: &VectorCellSolution, profile: &RoughnessProfile, nu: f64, nu_r: f64) -> Result<f64, CellError> {
    let y1 = w.y1;
    let v = integrate(profile, y1, w.mesh, |q, nodes, g| {
        let (_, pg) = phi_field(profile, y1, q.x, q.y);
        let (_, a1x, a1y) = q.eval(nodes, &w.u1);
        let (_, a2x, a2y) = q.eval(nodes, &w.u2);
        g.form(a1x, a1y, pg[0][0], pg[0][1]) + g.form(a2x, a2y, pg[1][0], pg[1][1])
    })?;
    Ok((nu + nu_r) * v)
}

/// ā(φ_{y₁}, φ_{y₁}) by quadrature on `mesh`.
pub fn phi_energy(profile: &RoughnessProfile, y1: f64, mesh: CellMesh, nu: f64, nu_r: f64) -> Result<f64, CellError> {
    let v = integrate(profile, y1, mesh, |q, _, g| {
        let (_, pg) = phi_field(profile, y1, q.x, q.y);
        g.form(pg[0][0], pg[0][1], pg[0][0], pg[0][1]) + g.form(pg[1][0], pg[1][1], pg[1][0], pg[1][1])
    })?;
    Ok((nu + nu_r) * v)
}

/// ∫_Y h w₁.
pub fn flux_integral(w: &VectorCellSolution, profile: &RoughnessProfile) -> Result<f64, CellError> {
    integrate(profile, w.y1, w.mesh, |q, nodes, g| g.h * q.eval(nodes, &w.u1).0)
}

/// ‖D̄w‖ with D̄ evaluated at element centres.
pub fn divergence_residual(w: &VectorCellSolution, profile: &RoughnessProfile) -> Result<f64, CellError> {
    let s = w.mesh.strip();
    let mut sum = 0.0;
    for (ei, ej) in s.elements() {
        let nodes = s.element_nodes(ei, ej);
        let q = s.center_point(ei, ej);
        let d = center_divergence_weights(profile, w.y1, &q)?;
        let div: f64 = (0..4).map(|k| d[k] * w.u1[nodes[k]] + d[4 + k] * w.u2[nodes[k]]).sum();
        sum += q.weight * div * div;
    }
    Ok(sum.sqrt())
}

/// Largest |w₂ − w₁ ∂h/∂η₁| over the top nodes.
pub fn slip_defect(w: &VectorCellSolution, profile: &RoughnessProfile) -> f64 {
    let s = w.mesh.strip();
    (0..s.nx)
        .map(|i| {
            let n = s.node(i, s.ny);
            (w.u2[n] - w.u1[n] * profile.d_deta1(w.y1, s.x(i))).abs()
        })
        .fold(0.0, f64::max)
}

/// All five auxiliary solutions at one y₁, with the time-dependent ones per requested time.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProblemSet {
    pub y1: f64,
    pub w1: VectorCellSolution,
    pub w2: VectorCellSolution,
    pub z1: ScalarCellSolution,
    pub times: Vec<f64>,
    pub w3: Vec<VectorCellSolution>,
    pub z2: Vec<ScalarCellSolution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub fluid: FluidParams,
    pub penalty: PenaltySpec,
    pub solver: SolverChoice,
}

/// Forcing-independent part of a cell solve (what the cache stores).
#[derive(Debug, Clone, PartialEq)]
pub struct CellBase {
    pub w1: VectorCellSolution,
    pub w2: VectorCellSolution,
    pub z1: ScalarCellSolution,
}

pub struct CellSolver<'a> {
    profile: &'a RoughnessProfile,
    y1: f64,
    params: CellParams,
    scalar: ScalarSystem,
    vector: VectorSolver,
}

impl<'a> CellSolver<'a> {
    pub fn new(profile: &'a RoughnessProfile, y1: f64, mesh: CellMesh, params: CellParams) -> Result<Self, CellError> {
        let scalar = ScalarSystem::new(profile, y1, mesh, params.solver)?;
        let f = params.fluid;
        let vector = VectorSolver::new(profile, y1, mesh, f.nu, f.nu_r, params.penalty, params.solver)?;
        Ok(CellSolver { profile, y1, params, scalar, vector })
    }

    pub fn base(&self, lift: &BoundaryLift) -> Result<CellBase, CellError> {
        Ok(CellBase { w1: self.vector.w1(self.profile)?, w2: self.vector.w2(self.profile, lift)?, z1: self.scalar.z1(self.profile, lift)? })
    }

    /// w³ and z² per time; reuses one solve when the forcing is time-independent.
    pub fn timed(&self, forcing: &Forcing, times: &[f64]) -> Result<(Vec<VectorCellSolution>, Vec<ScalarCellSolution>), CellError> {
        let mesh = self.scalar.mesh;
        let mut w3: Vec<VectorCellSolution> = Vec::with_capacity(times.len());
        let mut z2: Vec<ScalarCellSolution> = Vec::with_capacity(times.len());
        let f_const = forcing.f1.is_time_independent();
        let g_const = forcing.g.is_time_independent();
        for (k, &t) in times.iter().enumerate() {
            let w = if forcing.f1.is_zero() {
                VectorCellSolution::zero(self.y1, mesh, self.params.penalty.delta_c)
            } else if f_const && k > 0 {
                w3[0].clone()
            } else {
                self.vector.w3(self.profile, t, forcing)?
            };
            let z = if forcing.g.is_zero() {
                ScalarCellSolution::zero(self.y1, mesh)
            } else if g_const && k > 0 {
                z2[0].clone()
            } else {
                self.scalar.z2(self.profile, t, forcing, self.params.fluid.alpha)?
            };
            w3.push(w);
            z2.push(z);
        }
        Ok((w3, z2))
    }

    pub fn solve_all(&self, lift: &BoundaryLift, forcing: &Forcing, times: &[f64]) -> Result<CellProblemSet, CellError> {
        let base = self.base(lift)?;
        let (w3, z2) = self.timed(forcing, times)?;
        Ok(CellProblemSet { y1: self.y1, w1: base.w1, w2: base.w2, z1: base.z1, times: times.to_vec(), w3, z2 })
    }
}

/// Configuration warnings that do not prevent a solve.
pub fn forcing_warnings(forcing: &Forcing) -> Vec<String> {
    let mut w = Vec::new();
    if !forcing.f2.is_zero() {
        w.push("f2 is nonzero but the w3 cell problem pairs only f1 with the test function".to_string());
    }
    w
}
