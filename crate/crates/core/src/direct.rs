//! Penalized Galerkin solver for the ε-problem on the rescaled strip (0, L) × (0, 1).
//!
//! The variational identity is multiplied through by ε, so the discrete system reads
//!
//!   ε² ∫ ∂ₜv̄·Θ h + â(v̄, Θ) + ε N(v̄; v̄, Θ) + ε R̂(v̄, Θ) + (1/δ) ∫ D v D φ h = ℓ(Θ)
//!
//! with D v = ε b_ε·∇v₁ + (1/h) ∂v₂/∂y₂, forcing f̄ = f/ε² and ε² p = −(ε/δ) D v.
//! Unknowns: v₁, v₂, Z per node; v = Z = 0 at y₂ = 0, Z = 0 and v₂ = ε (h^ε)′ v₁ at y₂ = 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{full_dof_indices, Dof, DofMap, QuadPoint, ReducedAssembler, StripMesh};
use crate::geometry::{BoundaryLift, FluidParams, Forcing, GeometryError, RoughnessProfile, ScalarField};
use crate::linalg::{CsrMatrix, LinearSolveError, LinearSystem, SolverChoice};
use crate::reynolds::PressureSolution;

pub const QUAD_ORDER: usize = 3;
pub const MIN_ELEMENTS_PER_PERIOD: usize = 8;
pub const SOLVE_RTOL: f64 = 1e-10;
/// Energy growth factor in one step that counts as blow-up.
pub const BLOW_UP_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirectError {
    #[error("invalid direct config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("non-finite entry assembled")]
    AssemblyFailure,
    #[error("linear solve failed at t={t}: {source}")]
    SolveFailure { t: f64, source: LinearSolveError },
    #[error("linear solve at t={t} left backward error {residual:e}")]
    ResidualTooLarge { t: f64, residual: f64 },
    #[error("energy grew by a factor {ratio:.3e} in the step ending at t={t}")]
    BlowUp { t: f64, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    #[serde(default)]
    pub v1: ScalarField,
    #[serde(default)]
    pub v2: ScalarField,
    #[serde(default)]
    pub z: ScalarField,
}

impl InitialData {
    pub fn zero() -> Self {
        InitialData { v1: ScalarField::constant(0.0), v2: ScalarField::constant(0.0), z: ScalarField::constant(0.0) }
    }

    pub fn is_zero(&self) -> bool {
        self.v1.is_zero() && self.v2.is_zero() && self.z.is_zero()
    }
}

fn default_epp() -> usize {
    MIN_ELEMENTS_PER_PERIOD
}

fn default_ny() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectConfig {
    pub eps: f64,
    /// Penalty parameter; ε⁴ when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub dt: f64,
    #[serde(default)]
    pub t_end: f64,
    #[serde(default = "default_epp")]
    pub elements_per_period: usize,
    #[serde(default = "default_ny")]
    pub ny: usize,
    #[serde(default)]
    pub steady: bool,
    /// Time at which boundary data and forcing are evaluated in steady mode.
    #[serde(default)]
    pub steady_time: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "InitialData::zero")]
    pub initial: InitialData,
    #[serde(default)]
    pub solver: SolverChoice,
}

impl DirectConfig {
    pub fn steady(eps: f64) -> Self {
        DirectConfig {
            eps,
            delta: None,
            dt: 0.0,
            t_end: 0.0,
            elements_per_period: MIN_ELEMENTS_PER_PERIOD,
            ny: default_ny(),
            steady: true,
            steady_time: 0.0,
            snapshot_times: Vec::new(),
            initial: InitialData::zero(),
            solver: SolverChoice::Auto,
        }
    }

    pub fn unsteady(eps: f64, dt: f64, t_end: f64) -> Self {
        DirectConfig { dt, t_end, steady: false, ..Self::steady(eps) }
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.eps.powi(4))
    }

    /// Number of fast periods L/ε, if integral.
    pub fn periods(&self, length: f64) -> Result<usize, DirectError> {
        let r = length / self.eps;
        let n = r.round();
        if !(self.eps > 0.0 && self.eps.is_finite()) || n < 1.0 || (r - n).abs() > 1e-9 * r {
            return Err(DirectError::InvalidConfig(format!("L/eps must be a positive integer, got {r}")));
        }
        Ok(n as usize)
    }

    pub fn mesh(&self, length: f64) -> Result<StripMesh, DirectError> {
        let n = self.periods(length)?;
        Ok(StripMesh::new(n * self.elements_per_period, self.ny, length))
    }

    pub fn validate(&self, length: f64) -> Result<(), DirectError> {
        self.periods(length)?;
        let bad = |m: String| Err(DirectError::InvalidConfig(m));
        if self.elements_per_period < MIN_ELEMENTS_PER_PERIOD {
            return bad(format!(
                "mesh must have at least {MIN_ELEMENTS_PER_PERIOD} elements per fast period, got {}",
                self.elements_per_period
            ));
        }
        if self.ny < 2 {
            return bad(format!("ny must be at least 2, got {}", self.ny));
        }
        let delta = self.delta();
        if !(delta > 0.0 && delta.is_finite()) {
            return bad(format!("delta must be positive, got {delta}"));
        }
        if !self.steady {
            if !(self.dt > 0.0 && self.dt.is_finite()) {
                return bad(format!("dt must be positive, got {}", self.dt));
            }
            if !(self.t_end > 0.0 && self.t_end.is_finite()) {
                return bad(format!("t_end must be positive, got {}", self.t_end));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        if self.steady {
            0
        } else {
            ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize
        }
    }
}

/// Discrete fields at one time. `pressure` holds p^ε_δ per element (index `ej * nx + ei`).
#[derive(Debug, Clone, PartialEq)]
pub struct DirectState {
    pub t: f64,
    pub eps: f64,
    pub mesh: StripMesh,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub z: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl DirectState {
    pub fn zero(mesh: StripMesh, eps: f64, t: f64) -> Self {
        let n = mesh.n_nodes();
        DirectState { t, eps, mesh, v1: vec![0.0; n], v2: vec![0.0; n], z: vec![0.0; n], pressure: vec![0.0; mesh.n_elements()] }
    }

    fn full(&self) -> Vec<f64> {
        [self.v1.as_slice(), &self.v2, &self.z].concat()
    }

    /// ε² p^ε_δ per element.
    pub fn scaled_pressure(&self) -> Vec<f64> {
        self.pressure.iter().map(|p| self.eps * self.eps * p).collect()
    }

    pub fn value_at(&self, y1: f64, y2: f64) -> [f64; 3] {
        let m = &self.mesh;
        [m.interpolate(&self.v1, y1, y2), m.interpolate(&self.v2, y1, y2), m.interpolate(&self.z, y1, y2)]
    }

    pub fn pressure_at(&self, y1: f64, y2: f64) -> f64 {
        let (ei, ej, _, _) = self.mesh.locate(y1, y2);
        self.pressure[ej * self.mesh.nx + ei]
    }
}

/// Per-time norms on the strip. Index 0, 1, 2 = v₁, v₂, Z.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    /// ∫ |v̄|² h dy
    pub energy: f64,
    /// ‖ε b_ε·∇·‖
    pub eb_grad: [f64; 3],
    /// ‖∂·/∂y₂‖
    pub dy2: [f64; 3],
    /// ‖∂·/∂y₁‖
    pub dy1: [f64; 3],
    /// ‖·‖
    pub l2: [f64; 3],
    /// ‖div v‖² over the physical domain Ω^ε
    pub div_norm_sq: f64,
}

impl Diagnostics {
    pub const CSV_HEADER: &'static str = "t,energy,eb_v1,eb_v2,eb_z,dy2_v1,dy2_v2,dy2_z,dy1_v1,dy1_v2,dy1_z,l2_v1,l2_v2,l2_z,div_norm_sq";

    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.t, self.energy];
        v.extend(self.eb_grad);
        v.extend(self.dy2);
        v.extend(self.dy1);
        v.extend(self.l2);
        v.push(self.div_norm_sq);
        v
    }

    pub fn is_zero(&self) -> bool {
        self.values()[1..].iter().all(|&x| x == 0.0)
    }
}

/// L²(0, T; ·) norms accumulated from per-step diagnostics (right-point rule).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntegratedNorms {
    pub eb_grad: [f64; 3],
    pub dy2: [f64; 3],
    pub dy1: [f64; 3],
    pub l2: [f64; 3],
    /// ∫₀ᵀ ‖div v‖² dt
    pub div_sq: f64,
    pub max_div: f64,
    pub max_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub diagnostics: Vec<Diagnostics>,
    pub snapshots: Vec<DirectState>,
    pub final_state: DirectState,
}

impl Trajectory {
    pub fn integrated(&self) -> IntegratedNorms {
        let mut out = IntegratedNorms::default();
        let mut prev_t = self.diagnostics.first().map_or(0.0, |d| d.t);
        let steady = self.diagnostics.len() == 1;
        let mut acc = [[0.0f64; 3]; 4];
        for (k, d) in self.diagnostics.iter().enumerate() {
            let w = if steady {
                1.0
            } else if k == 0 {
                0.0
            } else {
                d.t - prev_t
            };
            prev_t = d.t;
            for c in 0..3 {
                acc[0][c] += w * d.eb_grad[c].powi(2);
                acc[1][c] += w * d.dy2[c].powi(2);
                acc[2][c] += w * d.dy1[c].powi(2);
                acc[3][c] += w * d.l2[c].powi(2);
            }
            out.div_sq += w * d.div_norm_sq;
            out.max_div = out.max_div.max(d.div_norm_sq.sqrt());
            out.max_energy = out.max_energy.max(d.energy);
        }
        let s = |a: [f64; 3]| a.map(f64::sqrt);
        out.eb_grad = s(acc[0]);
        out.dy2 = s(acc[1]);
        out.dy1 = s(acc[2]);
        out.l2 = s(acc[3]);
        out
    }
}

/// Geometry and shape data at one quadrature point.
#[derive(Debug, Clone, Copy)]
struct Pt {
    h: f64,
    /// ε b_ε·∇N_a
    e: [f64; 4],
    n: [f64; 4],
    dy: [f64; 4],
    dx: [f64; 4],
    w: f64,
    x: f64,
    y: f64,
}

impl Pt {
    fn new(profile: &RoughnessProfile, eps: f64, q: &QuadPoint) -> Result<Self, GeometryError> {
        let h = profile.eval_eps(eps, q.x);
        if !(h > 0.0) {
            return Err(GeometryError::DegenerateGap { y1: q.x, eta1: q.x / eps, h });
        }
        let s = -eps * q.y * profile.deps_dy1(eps, q.x) / h;
        let e = std::array::from_fn(|a| eps * q.dx[a] + s * q.dy[a]);
        Ok(Pt { h, e, n: q.n, dy: q.dy, dx: q.dx, w: q.weight, x: q.x, y: q.y })
    }

    /// (value, ε b_ε·∇, ∂y₁, ∂y₂) of a nodal field.
    fn eval(&self, nodes: &[usize; 4], f: &[f64]) -> [f64; 4] {
        let mut v = [0.0; 4];
        for k in 0..4 {
            let x = f[nodes[k]];
            v[0] += self.n[k] * x;
            v[1] += self.e[k] * x;
            v[2] += self.dx[k] * x;
            v[3] += self.dy[k] * x;
        }
        v
    }

    /// Weights of D v against the 8 local velocity DOFs (v₁ then v₂).
    fn div_weights(&self) -> [f64; 8] {
        let mut d = [0.0; 8];
        for k in 0..4 {
            d[k] = self.e[k];
            d[4 + k] = self.dy[k] / self.h;
        }
        d
    }
}

const NL: usize = 12;

fn idx(c: usize, a: usize) -> usize {
    c * 4 + a
}

/// Assembled pieces of the strip discretization for one (profile, ε, config).
pub struct DirectSystem<'a> {
    profile: &'a RoughnessProfile,
    fluid: FluidParams,
    lift: BoundaryLift,
    forcing: Forcing,
    config: DirectConfig,
    mesh: StripMesh,
    map: DofMap,
    delta: f64,
    points: Vec<Vec<Pt>>,
    centers: Vec<Pt>,
    static_local: Vec<[f64; NL * NL]>,
    mass_local: Vec<[f64; NL * NL]>,
}

impl<'a> DirectSystem<'a> {
    pub fn new(
        profile: &'a RoughnessProfile,
        fluid: &FluidParams,
        lift: &BoundaryLift,
        forcing: &Forcing,
        config: &DirectConfig,
    ) -> Result<Self, DirectError> {
        config.validate(profile.length())?;
        let problems = fluid.check();
        if !problems.is_empty() {
            return Err(DirectError::InvalidConfig(problems.join("; ")));
        }
        let eps = config.eps;
        let mesh = config.mesh(profile.length())?;
        let map = DofMap::build(mesh.n_nodes(), 3, |c, node| {
            let (i, j) = (node % mesh.nx, node / mesh.nx);
            match (c, j) {
                (_, 0) => None,
                (2, j) if j == mesh.ny => None,
                (1, j) if j == mesh.ny => Some(Some((0, eps * profile.deps_dy1(eps, mesh.x(i))))),
                _ => Some(None),
            }
        });
        let mut sys = DirectSystem {
            profile,
            fluid: *fluid,
            lift: *lift,
            forcing: forcing.clone(),
            config: config.clone(),
            mesh,
            map,
            delta: config.delta(),
            points: Vec::with_capacity(mesh.n_elements()),
            centers: Vec::with_capacity(mesh.n_elements()),
            static_local: Vec::with_capacity(mesh.n_elements()),
            mass_local: Vec::with_capacity(mesh.n_elements()),
        };
        for (ei, ej) in mesh.elements() {
            let pts = mesh
                .quad_points(ei, ej, QUAD_ORDER)
                .iter()
                .map(|q| Pt::new(profile, eps, q))
                .collect::<Result<Vec<_>, _>>()?;
            let c = Pt::new(profile, eps, &mesh.center_point(ei, ej))?;
            sys.points.push(pts);
            sys.centers.push(c);
        }
        for e in 0..mesh.n_elements() {
            let (k, m) = sys.element_static(e);
            if k.iter().chain(m.iter()).any(|v| !v.is_finite()) {
                return Err(DirectError::AssemblyFailure);
            }
            sys.static_local.push(k);
            sys.mass_local.push(m);
        }
        Ok(sys)
    }

    pub fn mesh(&self) -> StripMesh {
        self.mesh
    }

    pub fn map(&self) -> &DofMap {
        &self.map
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn element_nodes(&self, e: usize) -> [usize; 4] {
        self.mesh.element_nodes(e % self.mesh.nx, e / self.mesh.nx)
    }

    /// Local â + εR̂ + (1/δ)(D·, D·) and ε²-weighted mass.
    fn element_static(&self, e: usize) -> ([f64; NL * NL], [f64; NL * NL]) {
        let eps = self.config.eps;
        let FluidParams { nu, nu_r, alpha } = self.fluid;
        let ns = nu + nu_r;
        let mut k = [0.0; NL * NL];
        let mut m = [0.0; NL * NL];
        for p in &self.points[e] {
            let (w, h) = (p.w, p.h);
            for a in 0..4 {
                for b in 0..4 {
                    let grad = (p.e[a] * p.e[b] + p.dy[a] * p.dy[b] / (h * h)) * h;
                    let nn = p.n[a] * p.n[b] * h;
                    for c in 0..3 {
                        let coef = if c < 2 { ns } else { alpha };
                        k[idx(c, a) * NL + idx(c, b)] += w * coef * grad;
                        m[idx(c, a) * NL + idx(c, b)] += w * eps * eps * nn;
                    }
                    // ε R̂: rows test a, columns trial b
                    let r = 2.0 * nu_r * eps * w;
                    k[idx(0, a) * NL + idx(2, b)] += -r * p.dy[b] * p.n[a];
                    k[idx(1, a) * NL + idx(2, b)] += r * p.e[b] * h * p.n[a];
                    k[idx(2, a) * NL + idx(1, b)] += -r * p.e[b] * h * p.n[a];
                    k[idx(2, a) * NL + idx(0, b)] += r * p.dy[b] * p.n[a];
                    k[idx(2, a) * NL + idx(2, b)] += 4.0 * nu_r * eps * eps * w * nn;
                }
            }
        }
        let c = &self.centers[e];
        let d = c.div_weights();
        for a in 0..8 {
            for b in 0..8 {
                k[a * NL + b] += c.w * c.h * d[a] * d[b] / self.delta;
            }
        }
        (k, m)
    }

    /// Local ε N(u; ·, ·) + ε B̂(ξ; ·, ·) (both antisymmetrized) + ε B̂(·, ξ, ·) at time t.
    fn element_dynamic(&self, e: usize, u: &[f64], t: f64) -> [f64; NL * NL] {
        let eps = self.config.eps;
        let nn = self.mesh.n_nodes();
        let nodes = self.element_nodes(e);
        let (u0, w0) = (self.lift.u0.value(t), self.lift.w0.value(t));
        let mut k = [0.0; NL * NL];
        for p in &self.points[e] {
            let h = p.h;
            let a1 = p.eval(&nodes, &u[..nn])[0];
            let a2 = p.eval(&nodes, &u[nn..2 * nn])[0];
            let s = p.y * h;
            let lu = u0 * self.lift.cutoff_u.value(s);
            // transport derivative T(N_b) = (a₁ + U) ε b·∇N_b + (a₂/h) ∂N_b/∂y₂
            let tr: [f64; 4] = std::array::from_fn(|b| (a1 + lu) * p.e[b] + a2 / h * p.dy[b]);
            let du = u0 * self.lift.cutoff_u.derivative(s);
            let dw = w0 * self.lift.cutoff_w.derivative(s);
            for a in 0..4 {
                for b in 0..4 {
                    let skew = 0.5 * eps * p.w * h * (tr[b] * p.n[a] - tr[a] * p.n[b]);
                    for c in 0..3 {
                        k[idx(c, a) * NL + idx(c, b)] += skew;
                    }
                    let nnh = eps * p.w * h * p.n[a] * p.n[b];
                    k[idx(0, a) * NL + idx(1, b)] += du * nnh;
                    k[idx(2, a) * NL + idx(1, b)] += dw * nnh;
                }
            }
        }
        k
    }

    /// Local load vector ℓ(Θ) at time t; `with_time_derivative` includes −ε²∫ ∂ₜξ̄·Θ h.
    fn element_load(&self, e: usize, t: f64, with_time_derivative: bool) -> [f64; NL] {
        let eps = self.config.eps;
        let l = self.profile.length();
        let FluidParams { nu, nu_r, alpha } = self.fluid;
        let ns = nu + nu_r;
        let lift = &self.lift;
        let (u0, w0) = (lift.u0.value(t), lift.w0.value(t));
        let (du0, dw0) =
            if with_time_derivative { (lift.u0.derivative(t), lift.w0.derivative(t)) } else { (0.0, 0.0) };
        let mut r = [0.0; NL];
        for p in &self.points[e] {
            let h = p.h;
            let s = p.y * h;
            let (cu, dcu) = (lift.cutoff_u.value(s), lift.cutoff_u.derivative(s));
            let (cw, dcw) = (lift.cutoff_w.value(s), lift.cutoff_w.derivative(s));
            let eta = p.x / eps;
            let [f1, f2] = self.forcing.f(l, t, p.x, p.y, eta);
            let g = self.forcing.g(l, t, p.x, p.y, eta);
            for a in 0..4 {
                let nh = p.w * p.n[a] * h;
                let dy = p.w * p.dy[a];
                r[idx(0, a)] += nh * (f1 - eps * eps * du0 * cu + 2.0 * nu_r * eps * w0 * dcw) - ns * u0 * dcu * dy;
                r[idx(1, a)] += nh * f2;
                r[idx(2, a)] += nh * (g - eps * eps * dw0 * cw - 2.0 * nu_r * eps * u0 * dcu - 4.0 * nu_r * eps * eps * w0 * cw)
                    - alpha * w0 * dcw * dy;
            }
        }
        r
    }

    fn assemble(&self, local: impl Fn(usize) -> [f64; NL * NL]) -> Result<CsrMatrix, DirectError> {
        let mut asm = ReducedAssembler::new(&self.map);
        for e in 0..self.mesh.n_elements() {
            let k = local(e);
            if k.iter().any(|v| !v.is_finite()) {
                return Err(DirectError::AssemblyFailure);
            }
            asm.add_local(&full_dof_indices(&self.mesh, &self.element_nodes(e), 3), &k);
        }
        Ok(asm.finish())
    }

    /// Reduced â + εR̂ + (1/δ)(D·, D·).
    pub fn static_operator(&self) -> Result<CsrMatrix, DirectError> {
        self.assemble(|e| self.static_local[e])
    }

    /// Reduced ε² h-weighted mass.
    pub fn mass(&self) -> Result<CsrMatrix, DirectError> {
        self.assemble(|e| self.mass_local[e])
    }

    /// Reduced convection operator for advecting state `u` (full nodal, component-major) at t.
    pub fn convection(&self, u: &[f64], t: f64) -> Result<CsrMatrix, DirectError> {
        self.assemble(|e| self.element_dynamic(e, u, t))
    }

    /// Reduced penalty operator (D·, D·) without the 1/δ factor.
    pub fn penalty(&self) -> Result<CsrMatrix, DirectError> {
        self.assemble(|e| {
            let c = &self.centers[e];
            let d = c.div_weights();
            let mut k = [0.0; NL * NL];
            for a in 0..8 {
                for b in 0..8 {
                    k[a * NL + b] = c.w * c.h * d[a] * d[b];
                }
            }
            k
        })
    }

    pub fn load(&self, t: f64, with_time_derivative: bool) -> Result<Vec<f64>, DirectError> {
        let nn = self.mesh.n_nodes();
        let mut full = vec![0.0; 3 * nn];
        for e in 0..self.mesh.n_elements() {
            let r = self.element_load(e, t, with_time_derivative);
            for (k, gi) in full_dof_indices(&self.mesh, &self.element_nodes(e), 3).into_iter().enumerate() {
                full[gi] += r[k];
            }
        }
        if full.iter().any(|v| !v.is_finite()) {
            return Err(DirectError::AssemblyFailure);
        }
        Ok(self.map.restrict(&full))
    }

    /// Reduced unknowns from a state (values at master DOFs).
    pub fn reduce(&self, state: &DirectState) -> Vec<f64> {
        let full = state.full();
        let mut x = vec![0.0; self.map.n_free()];
        let nn = self.mesh.n_nodes();
        for c in 0..3 {
            for node in 0..nn {
                if let Dof::Free(k) = self.map.dof(c, node) {
                    x[k] = full[c * nn + node];
                }
            }
        }
        x
    }

    /// State from reduced unknowns, with the penalty pressure recomputed.
    pub fn state(&self, x: &[f64], t: f64) -> DirectState {
        let full = self.map.expand(x);
        let nn = self.mesh.n_nodes();
        let mut s = DirectState {
            t,
            eps: self.config.eps,
            mesh: self.mesh,
            v1: full[..nn].to_vec(),
            v2: full[nn..2 * nn].to_vec(),
            z: full[2 * nn..].to_vec(),
            pressure: Vec::new(),
        };
        s.pressure = (0..self.mesh.n_elements()).map(|e| -self.center_divergence(&s, e) / (self.config.eps * self.delta)).collect();
        s
    }

    fn center_divergence(&self, s: &DirectState, e: usize) -> f64 {
        let nodes = self.element_nodes(e);
        let c = &self.centers[e];
        let d = c.div_weights();
        (0..4).map(|k| d[k] * s.v1[nodes[k]] + d[4 + k] * s.v2[nodes[k]]).sum()
    }

    pub fn initial_state(&self) -> DirectState {
        let init = &self.config.initial;
        if init.is_zero() {
            return DirectState::zero(self.mesh, self.config.eps, 0.0);
        }
        let l = self.profile.length();
        let eps = self.config.eps;
        let eval = |f: &ScalarField| -> Vec<f64> {
            (0..self.mesh.n_nodes())
                .map(|n| {
                    let (x, y) = self.mesh.node_coords(n);
                    f.value(l, 0.0, x, y, x / eps)
                })
                .collect()
        };
        let raw = DirectState { v1: eval(&init.v1), v2: eval(&init.v2), z: eval(&init.z), ..DirectState::zero(self.mesh, eps, 0.0) };
        self.state(&self.reduce(&raw), 0.0)
    }

    pub fn diagnostics(&self, s: &DirectState) -> Diagnostics {
        let nn = self.mesh.n_nodes();
        let mut d = Diagnostics { t: s.t, ..Default::default() };
        let fields = [&s.v1, &s.v2, &s.z];
        let _ = nn;
        for e in 0..self.mesh.n_elements() {
            let nodes = self.element_nodes(e);
            for p in &self.points[e] {
                for (c, f) in fields.iter().enumerate() {
                    let [v, eb, dx, dy] = p.eval(&nodes, f);
                    d.energy += p.w * p.h * v * v;
                    d.eb_grad[c] += p.w * eb * eb;
                    d.dy1[c] += p.w * dx * dx;
                    d.dy2[c] += p.w * dy * dy;
                    d.l2[c] += p.w * v * v;
                }
            }
            let c = &self.centers[e];
            let dv = self.center_divergence(s, e);
            d.div_norm_sq += c.w * c.h * dv * dv / self.config.eps;
        }
        for c in 0..3 {
            d.eb_grad[c] = d.eb_grad[c].sqrt();
            d.dy1[c] = d.dy1[c].sqrt();
            d.dy2[c] = d.dy2[c].sqrt();
            d.l2[c] = d.l2[c].sqrt();
        }
        d
    }

    fn solve(&self, matrix: CsrMatrix, rhs: &[f64], t: f64) -> Result<Vec<f64>, DirectError> {
        let sys = LinearSystem::new(matrix, self.config.solver, false).map_err(|source| DirectError::SolveFailure { t, source })?;
        let (x, stats) = sys.solve(rhs).map_err(|source| DirectError::SolveFailure { t, source })?;
        if stats.backward_error > SOLVE_RTOL {
            return Err(DirectError::ResidualTooLarge { t, residual: stats.backward_error });
        }
        Ok(x)
    }

    /// Steady penalized system: no time derivative, no convection terms.
    pub fn solve_steady(&self) -> Result<DirectState, DirectError> {
        let t = self.config.steady_time;
        let x = self.solve(self.static_operator()?, &self.load(t, false)?, t)?;
        Ok(self.state(&x, t))
    }

    /// One implicit Euler step with the advecting velocity lagged at `state`.
    pub fn step(&self, state: &DirectState) -> Result<DirectState, DirectError> {
        let dt = self.config.dt;
        if !(dt > 0.0) {
            return Err(DirectError::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        let t = state.t + dt;
        let mass = self.mass()?;
        let x0 = self.reduce(state);
        let mut rhs = self.load(t, true)?;
        for (r, m) in rhs.iter_mut().zip(mass.matvec(&x0)) {
            *r += m / dt;
        }
        let u = state.full();
        let matrix = self.assemble(|e| {
            let dynk = self.element_dynamic(e, &u, t);
            let mut k = self.static_local[e];
            for (i, v) in k.iter_mut().enumerate() {
                *v += dynk[i] + self.mass_local[e][i] / dt;
            }
            k
        })?;
        let x = self.solve(matrix, &rhs, t)?;
        Ok(self.state(&x, t))
    }

    pub fn run(&self) -> Result<Trajectory, DirectError> {
        if self.config.steady {
            let s = self.solve_steady()?;
            return Ok(Trajectory { diagnostics: vec![self.diagnostics(&s)], snapshots: vec![s.clone()], final_state: s });
        }
        let mut state = self.initial_state();
        let mut diagnostics = vec![self.diagnostics(&state)];
        let mut snapshots = Vec::new();
        let mut pending: Vec<f64> = self.config.snapshot_times.clone();
        pending.sort_by(f64::total_cmp);
        let mut pending = pending.into_iter().peekable();
        while pending.peek().is_some_and(|&ts| ts <= state.t + 1e-12) {
            pending.next();
            snapshots.push(state.clone());
        }
        for _ in 0..self.config.n_steps() {
            let next = self.step(&state)?;
            let d = self.diagnostics(&next);
            let prev = diagnostics.last().map_or(0.0, |p| p.energy);
            if prev > 1e-300 && d.energy > BLOW_UP_FACTOR * prev {
                return Err(DirectError::BlowUp { t: next.t, ratio: d.energy / prev });
            }
            diagnostics.push(d);
            state = next;
            while pending.peek().is_some_and(|&ts| ts <= state.t + 1e-12) {
                pending.next();
                snapshots.push(state.clone());
            }
        }
        Ok(Trajectory { diagnostics, snapshots, final_state: state })
    }
}

pub fn run(
    config: &DirectConfig,
    fluid: &FluidParams,
    forcing: &Forcing,
    lift: &BoundaryLift,
    profile: &RoughnessProfile,
) -> Result<Trajectory, DirectError> {
    DirectSystem::new(profile, fluid, lift, forcing, config)?.run()
}

/// Column averages of ε² p over y₂, one per element column, shifted to h̄-weighted zero mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedPressure {
    pub y1: Vec<f64>,
    pub values: Vec<f64>,
    pub hbar: Vec<f64>,
}

impl AveragedPressure {
    /// √(Σ h̄ Δ (P − p⁰)² / Σ h̄ Δ), with p⁰ interpolated at the column centres.
    pub fn distance_to(&self, p0: &PressureSolution) -> f64 {
        let (num, den) = self.y1.iter().zip(&self.values).zip(&self.hbar).fold((0.0, 0.0), |(n, d), ((&y, &v), &h)| {
            (n + h * (v - p0.value_at(y)).powi(2), d + h)
        });
        (num / den).sqrt()
    }
}

pub fn average_pressure(state: &DirectState, profile: &RoughnessProfile) -> AveragedPressure {
    let m = state.mesh;
    let e2 = state.eps * state.eps;
    let y1: Vec<f64> = (0..m.nx).map(|i| (i as f64 + 0.5) * m.hx()).collect();
    let hbar: Vec<f64> = y1.iter().map(|&y| profile.hbar(y)).collect();
    let mut values: Vec<f64> =
        (0..m.nx).map(|i| (0..m.ny).map(|j| e2 * state.pressure[j * m.nx + i] * m.hy()).sum()).collect();
    let mean = values.iter().zip(&hbar).map(|(v, h)| v * h).sum::<f64>() / hbar.iter().sum::<f64>();
    for v in &mut values {
        *v -= mean;
    }
    AveragedPressure { y1, values, hbar }
}

/// Node table in the limit-field export schema, for side-by-side comparison with the
/// homogenized export: u = v + U₀𝒰(h^ε y₂) e₁, ω = Z + W₀𝒲(h^ε y₂), and the `p0` column holds ε²p.
pub fn field_table(state: &DirectState, profile: &RoughnessProfile, lift: &BoundaryLift) -> String {
    let m = state.mesh;
    let (eps, t) = (state.eps, state.t);
    let (u0, w0) = (lift.u0.value(t), lift.w0.value(t));
    let rows = (0..m.n_nodes()).map(|n| {
        let (y1, y2) = m.node_coords(n);
        let s = y2 * profile.eval_eps(eps, y1);
        let (v1, v2, z) = (state.v1[n], state.v2[n], state.z[n]);
        let u1 = v1 + u0 * lift.cutoff_u.value(s);
        let omega = z + w0 * lift.cutoff_w.value(s);
        let p = eps * eps * state.pressure_at(y1, y2);
        vec![t, y1, y2, (y1 / eps).rem_euclid(1.0), v1, v2, z, u1, v2, omega, p]
    });
    crate::output::csv_table(crate::homogenized::FIELD_CSV_HEADER, rows)
}
