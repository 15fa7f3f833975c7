//! Rough-boundary geometry, boundary lifts, forcing and the anisotropic
//! gradient operators used by the cell and strip discretizations.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const TWO_PI: f64 = 2.0 * PI;
const CLOSURE_FD_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("gap height {h} is not positive at (y1={y1}, eta1={eta1})")]
    DegenerateGap { y1: f64, eta1: f64, h: f64 },
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

/// One separable term `amp * cos(2π slow y₁/L + slow_phase) * cos(2π fast η₁ + fast_phase + drift y₁)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub amp: f64,
    #[serde(default)]
    pub slow: u32,
    #[serde(default)]
    pub fast: u32,
    #[serde(default)]
    pub slow_phase: f64,
    #[serde(default)]
    pub fast_phase: f64,
    /// Extra y₁-linear phase on the fast factor. Nonzero values generally break L-periodicity.
    #[serde(default)]
    pub drift: f64,
}

impl Mode {
    pub fn fast(amp: f64, fast: u32) -> Self {
        Mode { amp, slow: 0, fast, slow_phase: 0.0, fast_phase: 0.0, drift: 0.0 }
    }

    pub fn slow(amp: f64, slow: u32) -> Self {
        Mode { amp, slow, fast: 0, slow_phase: 0.0, fast_phase: 0.0, drift: 0.0 }
    }

    pub fn mixed(amp: f64, slow: u32, fast: u32) -> Self {
        Mode { amp, slow, fast, slow_phase: 0.0, fast_phase: 0.0, drift: 0.0 }
    }

    fn angles(&self, length: f64, y1: f64, eta1: f64) -> (f64, f64) {
        let ts = TWO_PI * self.slow as f64 * y1 / length + self.slow_phase;
        let tf = TWO_PI * self.fast as f64 * eta1 + self.fast_phase + self.drift * y1;
        (ts, tf)
    }

    fn value(&self, length: f64, y1: f64, eta1: f64) -> f64 {
        let (ts, tf) = self.angles(length, y1, eta1);
        self.amp * ts.cos() * tf.cos()
    }

    fn d_dy1(&self, length: f64, y1: f64, eta1: f64) -> f64 {
        let (ts, tf) = self.angles(length, y1, eta1);
        let ks = TWO_PI * self.slow as f64 / length;
        self.amp * (-ks * ts.sin() * tf.cos() - self.drift * ts.cos() * tf.sin())
    }

    fn d_deta1(&self, length: f64, y1: f64, eta1: f64) -> f64 {
        let (ts, tf) = self.angles(length, y1, eta1);
        -self.amp * TWO_PI * self.fast as f64 * ts.cos() * tf.sin()
    }
}

pub type ProfileFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    Modes { mean: f64, modes: Vec<Mode> },
    Closure { name: String, f: ProfileFn },
}

/// Gap height h(y₁, η₁), L-periodic in y₁ and 1-periodic in η₁.
#[derive(Clone)]
pub struct RoughnessProfile {
    length: f64,
    h_min: f64,
    h_max: f64,
    shape: Shape,
}

impl fmt::Debug for RoughnessProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("RoughnessProfile");
        d.field("length", &self.length).field("h_min", &self.h_min).field("h_max", &self.h_max);
        match &self.shape {
            Shape::Modes { mean, modes } => d.field("mean", mean).field("modes", modes),
            Shape::Closure { name, .. } => d.field("closure", name),
        };
        d.finish()
    }
}

impl RoughnessProfile {
    pub fn from_modes(
        length: f64,
        mean: f64,
        modes: Vec<Mode>,
        h_min: f64,
        h_max: f64,
    ) -> Result<Self, GeometryError> {
        check_declared(length, h_min, h_max)?;
        if !mean.is_finite() || modes.iter().any(|m| !m.amp.is_finite()) {
            return Err(GeometryError::InvalidProfile("non-finite coefficient".into()));
        }
        Ok(RoughnessProfile { length, h_min, h_max, shape: Shape::Modes { mean, modes } })
    }

    /// Flat gap h ≡ h0.
    pub fn constant(length: f64, h0: f64) -> Result<Self, GeometryError> {
        Self::from_modes(length, h0, Vec::new(), h0, h0)
    }

    /// `h0 + a1 cos(2πy₁/L) + a2 cos(2πη₁)` with bounds `h0 ∓ (|a1| + |a2|)`.
    pub fn two_scale(length: f64, h0: f64, a1: f64, a2: f64) -> Result<Self, GeometryError> {
        let spread = a1.abs() + a2.abs();
        let mut modes = Vec::new();
        if a1 != 0.0 {
            modes.push(Mode::slow(a1, 1));
        }
        if a2 != 0.0 {
            modes.push(Mode::fast(a2, 1));
        }
        Self::from_modes(length, h0, modes, h0 - spread, h0 + spread)
    }

    /// User-supplied closure; derivatives come from 4th-order central differences.
    pub fn from_closure(
        name: impl Into<String>,
        length: f64,
        h_min: f64,
        h_max: f64,
        f: ProfileFn,
    ) -> Result<Self, GeometryError> {
        check_declared(length, h_min, h_max)?;
        Ok(RoughnessProfile { length, h_min, h_max, shape: Shape::Closure { name: name.into(), f } })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h_min_declared(&self) -> f64 {
        self.h_min
    }

    pub fn h_max_declared(&self) -> f64 {
        self.h_max
    }

    pub fn closure_name(&self) -> Option<&str> {
        match &self.shape {
            Shape::Closure { name, .. } => Some(name),
            Shape::Modes { .. } => None,
        }
    }

    pub fn eval(&self, y1: f64, eta1: f64) -> f64 {
        match &self.shape {
            Shape::Modes { mean, modes } => {
                mean + modes.iter().map(|m| m.value(self.length, y1, eta1)).sum::<f64>()
            }
            Shape::Closure { f, .. } => f(y1, eta1),
        }
    }

    pub fn d_dy1(&self, y1: f64, eta1: f64) -> f64 {
        match &self.shape {
            Shape::Modes { modes, .. } => modes.iter().map(|m| m.d_dy1(self.length, y1, eta1)).sum(),
            Shape::Closure { f, .. } => central_diff4(|s| f(s, eta1), y1),
        }
    }

    pub fn d_deta1(&self, y1: f64, eta1: f64) -> f64 {
        match &self.shape {
            Shape::Modes { modes, .. } => modes.iter().map(|m| m.d_deta1(self.length, y1, eta1)).sum(),
            Shape::Closure { f, .. } => central_diff4(|s| f(y1, s), eta1),
        }
    }

    pub fn d2_deta1(&self, y1: f64, eta1: f64) -> f64 {
        match &self.shape {
            Shape::Modes { modes, .. } => modes
                .iter()
                .map(|m| {
                    let (ts, tf) = m.angles(self.length, y1, eta1);
                    let k = TWO_PI * m.fast as f64;
                    -m.amp * k * k * ts.cos() * tf.cos()
                })
                .sum(),
            Shape::Closure { f, .. } => {
                let s = 1e-3;
                let g = |e: f64| f(y1, e);
                (-g(eta1 + 2.0 * s) + 16.0 * g(eta1 + s) - 30.0 * g(eta1) + 16.0 * g(eta1 - s) - g(eta1 - 2.0 * s))
                    / (12.0 * s * s)
            }
        }
    }

    /// True when h does not depend on η₁ (all fast wavenumbers zero).
    pub fn is_eta_independent(&self) -> bool {
        match &self.shape {
            Shape::Modes { modes, .. } => modes.iter().all(|m| m.fast == 0 || m.amp == 0.0),
            Shape::Closure { .. } => false,
        }
    }

    /// h̄(y₁) = ∫₀¹ h(y₁, η₁) dη₁.
    pub fn hbar(&self, y1: f64) -> f64 {
        match &self.shape {
            Shape::Modes { mean, modes } => {
                mean + modes
                    .iter()
                    .filter(|m| m.fast == 0)
                    .map(|m| m.value(self.length, y1, 0.0))
                    .sum::<f64>()
            }
            Shape::Closure { f, .. } => {
                // trapezoid is spectrally accurate for smooth periodic integrands
                let n = 512;
                (0..n).map(|k| f(y1, k as f64 / n as f64)).sum::<f64>() / n as f64
            }
        }
    }

    /// h^ε(y₁) = h(y₁, y₁/ε).
    pub fn eval_eps(&self, eps: f64, y1: f64) -> f64 {
        self.eval(y1, y1 / eps)
    }

    /// d/dy₁ of h^ε: ∂h/∂y₁ + (1/ε)∂h/∂η₁ at η₁ = y₁/ε.
    pub fn deps_dy1(&self, eps: f64, y1: f64) -> f64 {
        let eta = y1 / eps;
        self.d_dy1(y1, eta) + self.d_deta1(y1, eta) / eps
    }

    /// Stable textual identity used for cache keys and manifests.
    pub fn fingerprint(&self) -> String {
        match &self.shape {
            Shape::Modes { mean, modes } => {
                let mut s = format!("modes;L={:e};hm={:e};hM={:e};mean={:e}", self.length, self.h_min, self.h_max, mean);
                for m in modes {
                    s.push_str(&format!(
                        ";[{:e},{},{},{:e},{:e},{:e}]",
                        m.amp, m.slow, m.fast, m.slow_phase, m.fast_phase, m.drift
                    ));
                }
                s
            }
            Shape::Closure { name, .. } => {
                format!("closure;{};L={:e};hm={:e};hM={:e}", name, self.length, self.h_min, self.h_max)
            }
        }
    }
}

fn check_declared(length: f64, h_min: f64, h_max: f64) -> Result<(), GeometryError> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(GeometryError::InvalidProfile(format!("length must be positive, got {length}")));
    }
    if !(h_min > 0.0 && h_min.is_finite()) {
        return Err(GeometryError::InvalidProfile(format!("h_min must be positive, got {h_min}")));
    }
    if !(h_max >= h_min && h_max.is_finite()) {
        return Err(GeometryError::InvalidProfile(format!("h_max {h_max} below h_min {h_min}")));
    }
    Ok(())
}

fn central_diff4(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let s = CLOSURE_FD_STEP;
    (-f(x + 2.0 * s) + 8.0 * f(x + s) - 8.0 * f(x - s) + f(x - 2.0 * s)) / (12.0 * s)
}

/// Coefficients (c₁, c₂) of b̄·∇w = c₁ ∂w/∂η₁ + c₂ ∂w/∂y₂.
pub fn bbar_coefficients(
    profile: &RoughnessProfile,
    y1: f64,
    y2: f64,
    eta1: f64,
) -> Result<[f64; 2], GeometryError> {
    let h = profile.eval(y1, eta1);
    if !(h > 0.0) {
        return Err(GeometryError::DegenerateGap { y1, eta1, h });
    }
    Ok([1.0, -y2 * profile.d_deta1(y1, eta1) / h])
}

/// Coefficients (c₁, c₂) of b_ε·∇v = c₁ ∂v/∂y₁ + c₂ ∂v/∂y₂ on the rescaled strip.
pub fn beps_coefficients(
    profile: &RoughnessProfile,
    eps: f64,
    y1: f64,
    y2: f64,
) -> Result<[f64; 2], GeometryError> {
    if !(eps > 0.0) {
        return Err(GeometryError::InvalidEpsilon(eps));
    }
    let eta1 = y1 / eps;
    let h = profile.eval(y1, eta1);
    if !(h > 0.0) {
        return Err(GeometryError::DegenerateGap { y1, eta1, h });
    }
    Ok([1.0, -y2 * profile.deps_dy1(eps, y1) / h])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub n_y1: usize,
    pub n_eta1: usize,
}

impl Default for SampleGrid {
    fn default() -> Self {
        SampleGrid { n_y1: 256, n_eta1: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileInvariant {
    Positivity,
    LowerBound,
    UpperBound,
    PeriodicY1,
    PeriodicEta1,
    DerivativePeriodicEta1,
    DerivativeY1,
    DerivativeEta1,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: ProfileInvariant,
    pub y1: f64,
    pub eta1: f64,
    /// Size of the worst offence (distance outside the bound, mismatch magnitude, ...).
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, inv: ProfileInvariant) -> bool {
        self.violations.iter().any(|v| v.invariant == inv)
    }
}

/// Samples the profile on a grid and records the worst offence for each violated invariant.
pub fn validate_profile(profile: &RoughnessProfile, grid: SampleGrid) -> ValidationReport {
    let n1 = grid.n_y1.max(1);
    let n2 = grid.n_eta1.max(1);
    let l = profile.length();
    let (hm, hmx) = (profile.h_min_declared(), profile.h_max_declared());
    let fd = 1e-4;
    let mut worst: Vec<Option<Violation>> = vec![None; 9];
    let mut record = |inv: ProfileInvariant, y1: f64, eta1: f64, mag: f64| {
        let slot = &mut worst[inv as usize];
        if slot.as_ref().map_or(true, |v| mag > v.magnitude) {
            *slot = Some(Violation { invariant: inv, y1, eta1, magnitude: mag });
        }
    };
    for i in 0..n1 {
        let y1 = l * i as f64 / n1 as f64;
        for k in 0..n2 {
            let eta = k as f64 / n2 as f64;
            let h = profile.eval(y1, eta);
            let hy = profile.d_dy1(y1, eta);
            let he = profile.d_deta1(y1, eta);
            if !(h.is_finite() && hy.is_finite() && he.is_finite()) {
                record(ProfileInvariant::NonFinite, y1, eta, f64::INFINITY);
                continue;
            }
            let scale = 1.0 + h.abs();
            if h <= 0.0 {
                record(ProfileInvariant::Positivity, y1, eta, -h);
            }
            if h < hm - 1e-12 * scale {
                record(ProfileInvariant::LowerBound, y1, eta, hm - h);
            }
            if h > hmx + 1e-12 * scale {
                record(ProfileInvariant::UpperBound, y1, eta, h - hmx);
            }
            let tol = 1e-9 * scale;
            let dl = (profile.eval(y1 + l, eta) - h).abs();
            if dl > tol {
                record(ProfileInvariant::PeriodicY1, y1, eta, dl);
            }
            let de = (profile.eval(y1, eta + 1.0) - h).abs();
            if de > tol {
                record(ProfileInvariant::PeriodicEta1, y1, eta, de);
            }
            let dde = (profile.d_deta1(y1, eta + 1.0) - he).abs();
            if dde > 1e-9 * (1.0 + he.abs()) {
                record(ProfileInvariant::DerivativePeriodicEta1, y1, eta, dde);
            }
            let cd_e = (profile.eval(y1, eta + fd) - profile.eval(y1, eta - fd)) / (2.0 * fd);
            let cd_y = (profile.eval(y1 + fd, eta) - profile.eval(y1 - fd, eta)) / (2.0 * fd);
            let me = (cd_e - he).abs();
            if me > 1e-5 * (1.0 + he.abs()) {
                record(ProfileInvariant::DerivativeEta1, y1, eta, me);
            }
            let my = (cd_y - hy).abs();
            if my > 1e-5 * (1.0 + hy.abs()) {
                record(ProfileInvariant::DerivativeY1, y1, eta, my);
            }
        }
    }
    ValidationReport { violations: worst.into_iter().flatten().collect() }
}

/// Viscosities ν, ν_r and the micro-rotation viscosity α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidParams {
    pub nu: f64,
    #[serde(default)]
    pub nu_r: f64,
    pub alpha: f64,
}

impl Default for FluidParams {
    fn default() -> Self {
        FluidParams { nu: 1.0, nu_r: 0.0, alpha: 1.0 }
    }
}

impl FluidParams {
    pub fn nu_sum(&self) -> f64 {
        self.nu + self.nu_r
    }

    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.nu > 0.0) {
            out.push(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.nu_r >= 0.0) {
            out.push(format!("nu_r must be non-negative, got {}", self.nu_r));
        }
        if !(self.alpha > 0.0) {
            out.push(format!("alpha must be positive, got {}", self.alpha));
        }
        out
    }
}

/// Scalar time signal `mean + amplitude sin(omega t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSignal {
    Constant { value: f64 },
    Harmonic { mean: f64, amplitude: f64, omega: f64, #[serde(default)] phase: f64 },
}

impl TimeSignal {
    pub const ZERO: TimeSignal = TimeSignal::Constant { value: 0.0 };
    pub const ONE: TimeSignal = TimeSignal::Constant { value: 1.0 };

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeSignal::Constant { value } => value,
            TimeSignal::Harmonic { mean, amplitude, omega, phase } => mean + amplitude * (omega * t + phase).sin(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            TimeSignal::Constant { .. } => 0.0,
            TimeSignal::Harmonic { amplitude, omega, phase, .. } => amplitude * omega * (omega * t + phase).cos(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeSignal::Constant { .. })
    }

    pub fn scaled(&self, c: f64) -> TimeSignal {
        match *self {
            TimeSignal::Constant { value } => TimeSignal::Constant { value: c * value },
            TimeSignal::Harmonic { mean, amplitude, omega, phase } => {
                TimeSignal::Harmonic { mean: c * mean, amplitude: c * amplitude, omega, phase }
            }
        }
    }
}

impl Default for TimeSignal {
    fn default() -> Self {
        TimeSignal::ZERO
    }
}

/// Polynomial bump `amplitude (1 − (s/support)²)³` on [0, support), `amplitude` for s < 0, zero beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub support: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl Cutoff {
    pub fn bump(support: f64) -> Self {
        Cutoff { support, amplitude: 1.0 }
    }

    pub fn value(&self, s: f64) -> f64 {
        if s < 0.0 {
            self.amplitude
        } else if s >= self.support {
            0.0
        } else {
            let r = s / self.support;
            let q = 1.0 - r * r;
            self.amplitude * q * q * q
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        if s < 0.0 || s >= self.support {
            0.0
        } else {
            let r = s / self.support;
            let q = 1.0 - r * r;
            -6.0 * self.amplitude * r * q * q / self.support
        }
    }
}

/// Bottom-wall data U₀(t), W₀(t) and the cutoffs 𝒰, 𝒲 that lift it into the film.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryLift {
    pub u0: TimeSignal,
    pub w0: TimeSignal,
    pub cutoff_u: Cutoff,
    pub cutoff_w: Cutoff,
}

impl BoundaryLift {
    /// Default bump cutoffs supported on [0, h_m).
    pub fn new(profile: &RoughnessProfile, u0: TimeSignal, w0: TimeSignal) -> Self {
        let c = Cutoff::bump(profile.h_min_declared());
        BoundaryLift { u0, w0, cutoff_u: c, cutoff_w: c }
    }

    /// Ū = U₀(t) 𝒰(h y₂) on the cell.
    pub fn ubar(&self, t: f64, h: f64, y2: f64) -> f64 {
        self.u0.value(t) * self.cutoff_u.value(h * y2)
    }

    /// W̄ = W₀(t) 𝒲(h y₂) on the cell.
    pub fn wbar(&self, t: f64, h: f64, y2: f64) -> f64 {
        self.w0.value(t) * self.cutoff_w.value(h * y2)
    }

    /// Problems with the lift invariants; empty when admissible.
    pub fn check(&self, profile: &RoughnessProfile) -> Vec<String> {
        let mut out = Vec::new();
        let hm = profile.h_min_declared();
        for (name, c) in [("cutoff_u", &self.cutoff_u), ("cutoff_w", &self.cutoff_w)] {
            if !(c.support > 0.0) {
                out.push(format!("{name}: support must be positive"));
            } else if c.support > hm * (1.0 + 1e-12) {
                out.push(format!("{name}: support {} exceeds h_min {hm}", c.support));
            }
            if c.amplitude != 1.0 {
                out.push(format!("{name}: value at 0 is {} instead of 1", c.amplitude));
            }
        }
        out
    }
}

/// One term `amp * cos(2π slow y₁/L + slow_phase) * cos(2π fast η₁ + fast_phase) * y₂^y2_power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMode {
    pub amp: f64,
    #[serde(default)]
    pub slow: u32,
    #[serde(default)]
    pub fast: u32,
    #[serde(default)]
    pub slow_phase: f64,
    #[serde(default)]
    pub fast_phase: f64,
    #[serde(default)]
    pub y2_power: u32,
}

/// Scalar density `time(t) * (mean + Σ modes)`; periodic in y₁ and η₁ by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarField {
    #[serde(default)]
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<FieldMode>,
    #[serde(default = "unit_signal")]
    pub time: TimeSignal,
}

fn unit_signal() -> TimeSignal {
    TimeSignal::ONE
}

impl Default for ScalarField {
    fn default() -> Self {
        ScalarField::constant(0.0)
    }
}

impl ScalarField {
    pub fn constant(c: f64) -> Self {
        ScalarField { mean: c, modes: Vec::new(), time: TimeSignal::ONE }
    }

    pub fn value(&self, length: f64, t: f64, y1: f64, y2: f64, eta1: f64) -> f64 {
        let mut s = self.mean;
        for m in &self.modes {
            let ts = TWO_PI * m.slow as f64 * y1 / length + m.slow_phase;
            let tf = TWO_PI * m.fast as f64 * eta1 + m.fast_phase;
            s += m.amp * ts.cos() * tf.cos() * y2.powi(m.y2_power as i32);
        }
        self.time.value(t) * s
    }

    pub fn is_zero(&self) -> bool {
        let time_zero = match self.time {
            TimeSignal::Constant { value } => value == 0.0,
            TimeSignal::Harmonic { mean, amplitude, .. } => mean == 0.0 && amplitude == 0.0,
        };
        time_zero || (self.mean == 0.0 && self.modes.iter().all(|m| m.amp == 0.0))
    }

    pub fn is_time_independent(&self) -> bool {
        self.time.is_constant()
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        ScalarField { mean: c * self.mean, modes: self.modes.iter().map(|m| FieldMode { amp: c * m.amp, ..*m }).collect(), time: self.time }
    }
}

/// Body force f = (f₁, f₂) and body couple g in the rescaled variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Forcing {
    #[serde(default)]
    pub f1: ScalarField,
    #[serde(default)]
    pub f2: ScalarField,
    #[serde(default)]
    pub g: ScalarField,
}

impl Forcing {
    pub fn zero() -> Self {
        Forcing::default()
    }

    pub fn f(&self, length: f64, t: f64, y1: f64, y2: f64, eta1: f64) -> [f64; 2] {
        [self.f1.value(length, t, y1, y2, eta1), self.f2.value(length, t, y1, y2, eta1)]
    }

    pub fn g(&self, length: f64, t: f64, y1: f64, y2: f64, eta1: f64) -> f64 {
        self.g.value(length, t, y1, y2, eta1)
    }

    pub fn scaled(&self, c: f64) -> Forcing {
        Forcing { f1: self.f1.scaled(c), f2: self.f2.scaled(c), g: self.g.scaled(c) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rough() -> RoughnessProfile {
        RoughnessProfile::two_scale(1.0, 1.0, 0.0, 0.3).unwrap()
    }

    #[test]
    fn bbar_flat_and_bottom() {
        let flat = RoughnessProfile::constant(1.0, 1.0).unwrap();
        assert_eq!(bbar_coefficients(&flat, 0.3, 0.7, 0.2).unwrap(), [1.0, 0.0]);
        assert_eq!(bbar_coefficients(&rough(), 0.3, 0.0, 0.2).unwrap()[1], 0.0);
    }

    #[test]
    fn bbar_hand_value() {
        // h_η = -0.6π sin(2πη) = -0.6π at η = 1/4, h = 1
        let c = bbar_coefficients(&rough(), 0.0, 1.0, 0.25).unwrap();
        assert!((c[1] - 0.6 * PI).abs() < 1e-12);
    }

    #[test]
    fn beps_hand_value() {
        let c = beps_coefficients(&rough(), 0.5, 0.125, 1.0).unwrap();
        assert!((c[1] - 1.2 * PI).abs() < 1e-12);
        let flat = RoughnessProfile::constant(2.0, 0.8).unwrap();
        assert_eq!(beps_coefficients(&flat, 0.1, 0.3, 0.4).unwrap(), [1.0, 0.0]);
    }

    #[test]
    fn beps_rejects_bad_eps() {
        assert_eq!(beps_coefficients(&rough(), 0.0, 0.1, 0.1), Err(GeometryError::InvalidEpsilon(0.0)));
    }

    #[test]
    fn degenerate_gap_reported() {
        let p = RoughnessProfile::from_modes(1.0, 0.1, vec![Mode::fast(-0.2, 1)], 0.05, 0.3).unwrap();
        assert!(matches!(bbar_coefficients(&p, 0.0, 0.5, 0.0), Err(GeometryError::DegenerateGap { .. })));
    }

    #[test]
    fn validate_examples() {
        let flat = RoughnessProfile::constant(1.0, 1.0).unwrap();
        assert!(validate_profile(&flat, SampleGrid::default()).is_valid());

        let neg = RoughnessProfile::from_modes(1.0, 0.1, vec![Mode::fast(-0.2, 1)], 0.05, 0.3).unwrap();
        let r = validate_profile(&neg, SampleGrid { n_y1: 8, n_eta1: 64 });
        assert!(r.has(ProfileInvariant::Positivity));

        let drift = Mode { drift: 0.1, ..Mode::fast(0.3, 1) };
        let p = RoughnessProfile::from_modes(1.0, 1.0, vec![drift], 0.7, 1.3).unwrap();
        let r = validate_profile(&p, SampleGrid { n_y1: 16, n_eta1: 16 });
        assert!(r.has(ProfileInvariant::PeriodicY1));
        assert!(!r.has(ProfileInvariant::PeriodicEta1));
    }

    #[test]
    fn wrong_declared_bound_flagged() {
        let p = RoughnessProfile::from_modes(1.0, 1.0, vec![Mode::fast(0.3, 1)], 0.8, 1.3).unwrap();
        let r = validate_profile(&p, SampleGrid { n_y1: 4, n_eta1: 64 });
        assert!(r.has(ProfileInvariant::LowerBound));
        let v = r.violations.iter().find(|v| v.invariant == ProfileInvariant::LowerBound).unwrap();
        assert!((v.magnitude - 0.1).abs() < 1e-9);
    }

    #[test]
    fn closure_derivatives_match_analytic() {
        let f: ProfileFn = Arc::new(|y1: f64, eta: f64| {
            1.0 + 0.2 * (TWO_PI * y1 / 2.0).cos() + 0.3 * (TWO_PI * eta).cos()
        });
        let c = RoughnessProfile::from_closure("two_scale", 2.0, 0.5, 1.5, f).unwrap();
        let a = RoughnessProfile::two_scale(2.0, 1.0, 0.2, 0.3).unwrap();
        for &(y, e) in &[(0.1, 0.2), (1.3, 0.77), (0.0, 0.5)] {
            assert!((c.d_dy1(y, e) - a.d_dy1(y, e)).abs() < 1e-8);
            assert!((c.d_deta1(y, e) - a.d_deta1(y, e)).abs() < 1e-8);
            assert!((c.hbar(y) - a.hbar(y)).abs() < 1e-12);
        }
        assert!(validate_profile(&c, SampleGrid { n_y1: 16, n_eta1: 16 }).is_valid());
    }

    #[test]
    fn cutoff_shape() {
        let c = Cutoff::bump(0.7);
        assert_eq!(c.value(0.0), 1.0);
        assert_eq!(c.value(-1.0), 1.0);
        assert_eq!(c.value(0.7), 0.0);
        assert_eq!(c.value(2.0), 0.0);
        assert_eq!(c.derivative(0.0), 0.0);
        let s = 0.3;
        let fd = (c.value(s + 1e-6) - c.value(s - 1e-6)) / 2e-6;
        assert!((fd - c.derivative(s)).abs() < 1e-8);
    }

    #[test]
    fn hbar_modes() {
        let p = RoughnessProfile::from_modes(2.0, 1.0, vec![Mode::slow(0.2, 1), Mode::fast(0.3, 1), Mode::mixed(0.06, 1, 1)], 0.5, 1.6)
            .unwrap();
        let y = 0.4;
        let n = 1000;
        let num: f64 = (0..n).map(|k| p.eval(y, k as f64 / n as f64)).sum::<f64>() / n as f64;
        assert!((p.hbar(y) - num).abs() < 1e-12);
    }
}
