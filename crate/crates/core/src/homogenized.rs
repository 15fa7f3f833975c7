//! Limit fields rebuilt from cell solutions and the Reynolds pressure:
//! v⁰ = ∂p⁰/∂y₁ w¹ + U₀ w² + w³, Z⁰ = W₀ z¹ + z², u⁰ = Ū e₁ + v⁰, ω⁰ = W̄ + Z⁰.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{divergence_residual, CellError, CellProblemSet, ScalarCellSolution, VectorCellSolution};
use crate::geometry::{BoundaryLift, RoughnessProfile};
use crate::output::{csv_table, ArtifactWriter, OutputError};
use crate::reynolds::{CoefficientSample, PressureSolution};

#[derive(Debug, Error)]
pub enum HomogenizedError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

#[derive(Debug, Clone, PartialEq)]
struct SampleFields {
    y1: f64,
    w1: VectorCellSolution,
    w2: VectorCellSolution,
    w3: VectorCellSolution,
    z1: ScalarCellSolution,
    z2: ScalarCellSolution,
}

/// Limit solution at one time; evaluators are read-only.
#[derive(Debug, Clone)]
pub struct HomogenizedSolution {
    pub t: f64,
    pub u0: f64,
    pub w0: f64,
    pub pressure: PressureSolution,
    samples: Vec<SampleFields>,
    spacing: f64,
    profile: RoughnessProfile,
    lift: BoundaryLift,
}

/// Point values of every exported field.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldValues {
    pub v0: [f64; 2],
    pub z0: f64,
    pub u0: [f64; 2],
    pub omega0: f64,
    pub p0: f64,
}

/// Largest boundary-condition violations over the sample columns and cell nodes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryDefects {
    pub v_bottom: f64,
    pub slip_top: f64,
    pub z_walls: f64,
}

impl BoundaryDefects {
    pub fn max(&self) -> f64 {
        self.v_bottom.max(self.slip_top).max(self.z_walls)
    }
}

pub fn reconstruct(
    pressure: &PressureSolution,
    sample: &CoefficientSample,
    lift: &BoundaryLift,
    profile: &RoughnessProfile,
    time_index: usize,
) -> Result<HomogenizedSolution, HomogenizedError> {
    let c = &sample.coeffs;
    let mismatch = HomogenizedError::GridMismatch;
    if pressure.n() != c.n() || sample.cells.len() != c.n() {
        return Err(mismatch(format!("pressure has {} nodes, coefficients {}, cells {}", pressure.n(), c.n(), sample.cells.len())));
    }
    if (pressure.length - c.length).abs() > 1e-12 * c.length {
        return Err(mismatch(format!("pressure length {} vs coefficient length {}", pressure.length, c.length)));
    }
    if time_index >= c.times.len() || pressure.t != c.times[time_index] {
        return Err(mismatch(format!("pressure time {} not at coefficient time index {time_index}", pressure.t)));
    }
    let samples = sample
        .cells
        .iter()
        .map(|s: &CellProblemSet| {
            if s.w3.len() <= time_index || s.z2.len() <= time_index {
                return Err(mismatch(format!("cell set at y1={} lacks time index {time_index}", s.y1)));
            }
            Ok(SampleFields {
                y1: s.y1,
                w1: s.w1.clone(),
                w2: s.w2.clone(),
                w3: s.w3[time_index].clone(),
                z1: s.z1.clone(),
                z2: s.z2[time_index].clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let t = pressure.t;
    Ok(HomogenizedSolution {
        t,
        u0: lift.u0.value(t),
        w0: lift.w0.value(t),
        pressure: pressure.clone(),
        samples,
        spacing: c.spacing(),
        profile: profile.clone(),
        lift: *lift,
    })
}

impl HomogenizedSolution {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn sample_y1(&self, k: usize) -> f64 {
        self.samples[k].y1
    }

    /// Neighbouring samples and linear weights for y₁ (samples sit at element midpoints).
    fn weights(&self, y1: f64) -> [(usize, f64); 2] {
        let n = self.samples.len();
        let s = y1.rem_euclid(self.pressure.length) / self.spacing - 0.5;
        let f = s.floor();
        let r = s - f;
        let k0 = (f as isize).rem_euclid(n as isize) as usize;
        [(k0, 1.0 - r), ((k0 + 1) % n, r)]
    }

    pub fn v0(&self, y1: f64, y2: f64, eta1: f64) -> [f64; 2] {
        let dp = self.pressure.slope_at(y1);
        let mut v = [0.0; 2];
        for (k, w) in self.weights(y1) {
            if w == 0.0 {
                continue;
            }
            let s = &self.samples[k];
            let (a, b, c) = (s.w1.value_at(eta1, y2), s.w2.value_at(eta1, y2), s.w3.value_at(eta1, y2));
            for i in 0..2 {
                v[i] += w * (dp * a[i] + self.u0 * b[i] + c[i]);
            }
        }
        v
    }

    pub fn z0(&self, y1: f64, y2: f64, eta1: f64) -> f64 {
        self.weights(y1)
            .iter()
            .filter(|(_, w)| *w != 0.0)
            .map(|&(k, w)| {
                let s = &self.samples[k];
                w * (self.w0 * s.z1.value_at(eta1, y2) + s.z2.value_at(eta1, y2))
            })
            .sum()
    }

    pub fn fields(&self, y1: f64, y2: f64, eta1: f64) -> FieldValues {
        let v0 = self.v0(y1, y2, eta1);
        let z0 = self.z0(y1, y2, eta1);
        let h = self.profile.eval(y1, eta1);
        FieldValues {
            v0,
            z0,
            u0: [self.lift.ubar(self.t, h, y2) + v0[0], v0[1]],
            omega0: self.lift.wbar(self.t, h, y2) + z0,
            p0: self.pressure.value_at(y1),
        }
    }

    /// v⁰ at sample k as a cell field (exact combination, no interpolation).
    pub fn sample_velocity(&self, k: usize) -> VectorCellSolution {
        let s = &self.samples[k];
        let dp = self.pressure.slopes[self.pressure.element_of(s.y1)];
        let comb = |a: &[f64], b: &[f64], c: &[f64]| -> Vec<f64> {
            a.iter().zip(b).zip(c).map(|((x, y), z)| dp * x + self.u0 * y + z).collect()
        };
        VectorCellSolution {
            u1: comb(&s.w1.u1, &s.w2.u1, &s.w3.u1),
            u2: comb(&s.w1.u2, &s.w2.u2, &s.w3.u2),
            divergence_residual: 0.0,
            ..s.w1.clone()
        }
    }

    /// (‖D̄v⁰‖, |p′|‖D̄w¹‖ + |U₀|‖D̄w²‖ + ‖D̄w³‖) at sample k.
    pub fn divergence_check(&self, k: usize) -> Result<(f64, f64), HomogenizedError> {
        let s = &self.samples[k];
        let dp = self.pressure.slopes[self.pressure.element_of(s.y1)];
        let p = &self.profile;
        let v = divergence_residual(&self.sample_velocity(k), p)?;
        let bound = dp.abs() * divergence_residual(&s.w1, p)?
            + self.u0.abs() * divergence_residual(&s.w2, p)?
            + divergence_residual(&s.w3, p)?;
        Ok((v, bound))
    }

    pub fn boundary_defects(&self) -> BoundaryDefects {
        let mut d = BoundaryDefects::default();
        for (k, s) in self.samples.iter().enumerate() {
            let v = self.sample_velocity(k);
            let mesh = v.mesh.strip();
            for i in 0..mesh.nx {
                let (b, t) = (mesh.node(i, 0), mesh.node(i, mesh.ny));
                let eta = mesh.x(i);
                d.v_bottom = d.v_bottom.max(v.u1[b].abs()).max(v.u2[b].abs());
                d.slip_top = d.slip_top.max((v.u2[t] - v.u1[t] * self.profile.d_deta1(s.y1, eta)).abs());
                for n in [b, t] {
                    let z = self.w0 * s.z1.values[n] + s.z2.values[n];
                    d.z_walls = d.z_walls.max(z.abs());
                }
            }
        }
        d
    }
}

/// Evaluation grid; each axis is sampled at n equispaced points including both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_y1: usize,
    pub n_y2: usize,
    pub n_eta1: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n_y1: 33, n_y2: 11, n_eta1: 17 }
    }
}

fn axis(n: usize, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect(),
    }
}

pub const FIELD_CSV_HEADER: &str = "t,y1,y2,eta1,v0_1,v0_2,Z0,u0_1,u0_2,omega0,p0";

/// Field table on the grid (rows ordered y₁, then y₂, then η₁).
pub fn field_table(sol: &HomogenizedSolution, grid: GridSpec) -> String {
    let l = sol.pressure.length;
    let mut rows = Vec::with_capacity(grid.n_y1 * grid.n_y2 * grid.n_eta1);
    for &y1 in &axis(grid.n_y1, l) {
        for &y2 in &axis(grid.n_y2, 1.0) {
            for &eta in &axis(grid.n_eta1, 1.0) {
                let f = sol.fields(y1, y2, eta);
                rows.push(vec![sol.t, y1, y2, eta, f.v0[0], f.v0[1], f.z0, f.u0[0], f.u0[1], f.omega0, f.p0]);
            }
        }
    }
    csv_table(FIELD_CSV_HEADER, rows)
}

/// Writes `<stem>.csv` under the writer's root.
pub fn export_fields(sol: &HomogenizedSolution, grid: GridSpec, writer: &mut ArtifactWriter, stem: &str) -> Result<PathBuf, HomogenizedError> {
    Ok(writer.write(&format!("{stem}.csv"), field_table(sol, grid).as_bytes())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{CellMesh, PenaltySpec};
    use crate::geometry::{FluidParams, Forcing, TimeSignal};
    use crate::reynolds::{sample_coefficients, solve_pressure, SamplingSpec};

    fn solve(profile: &RoughnessProfile, lift: &BoundaryLift, forcing: &Forcing) -> HomogenizedSolution {
        let spec = SamplingSpec { n_elements: 4, mesh: CellMesh::square(8), penalty: PenaltySpec::default(), solver: Default::default() };
        let s = sample_coefficients(profile, &FluidParams::default(), lift, forcing, &[0.0], &spec, None).unwrap();
        let p = solve_pressure(&s.coeffs, 0, lift.u0.value(0.0)).unwrap();
        reconstruct(&p, &s, lift, profile, 0).unwrap()
    }

    #[test]
    fn zero_data_zero_fields() {
        let p = RoughnessProfile::two_scale(1.0, 1.0, 0.1, 0.2).unwrap();
        let lift = BoundaryLift::new(&p, TimeSignal::ZERO, TimeSignal::ZERO);
        let sol = solve(&p, &lift, &Forcing::zero());
        let f = sol.fields(0.3, 0.4, 0.7);
        assert_eq!(f, FieldValues::default());
        let table = field_table(&sol, GridSpec { n_y1: 2, n_y2: 2, n_eta1: 2 });
        assert_eq!(table.lines().count(), 9);
        for line in table.lines().skip(1) {
            assert!(line.split(',').skip(4).all(|v| v.parse::<f64>().unwrap() == 0.0));
        }
    }

    #[test]
    fn boundary_conditions_at_samples() {
        let p = RoughnessProfile::two_scale(1.0, 1.0, 0.1, 0.2).unwrap();
        let lift = BoundaryLift::new(&p, TimeSignal::ONE, TimeSignal::Constant { value: 0.7 });
        let sol = solve(&p, &lift, &Forcing::zero());
        assert!(sol.boundary_defects().max() < 1e-13);
        for k in 0..sol.n_samples() {
            let (r, b) = sol.divergence_check(k).unwrap();
            assert!(r <= b * (1.0 + 1e-9) + 1e-15, "{r} > {b}");
        }
    }

    #[test]
    fn grid_mismatch_detected() {
        let p = RoughnessProfile::constant(1.0, 1.0).unwrap();
        let lift = BoundaryLift::new(&p, TimeSignal::ONE, TimeSignal::ZERO);
        let spec = SamplingSpec { n_elements: 4, mesh: CellMesh::square(4), penalty: PenaltySpec::default(), solver: Default::default() };
        let s = sample_coefficients(&p, &FluidParams::default(), &lift, &Forcing::zero(), &[0.0], &spec, None).unwrap();
        let mut pr = solve_pressure(&s.coeffs, 0, 1.0).unwrap();
        pr.nodes.pop();
        assert!(matches!(reconstruct(&pr, &s, &lift, &p, 0), Err(HomogenizedError::GridMismatch(_))));
    }
}
