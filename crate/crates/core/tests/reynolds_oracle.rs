use std::f64::consts::PI;

use roughfilm::cell::{CellMesh, PenaltySpec};
use roughfilm::geometry::{BoundaryLift, FluidParams, Forcing, Mode, RoughnessProfile, ScalarField, TimeSignal};
use roughfilm::reynolds::{midpoints, sample_coefficients, solve_pressure, ReynoldsCoefficients, SamplingSpec};

const L: f64 = 2.0;

fn a_fn(y: f64) -> f64 {
    (1.0 + 0.5 * (2.0 * PI * y / L).cos()).powi(3) / 3.0
}

fn b_fn(y: f64) -> f64 {
    -0.5 * (1.0 + 0.4 * (2.0 * PI * y / L).sin() + 0.1 * (6.0 * PI * y / L).cos())
}

fn c_fn(y: f64) -> f64 {
    0.2 * (4.0 * PI * y / L).cos()
}

fn hbar_fn(y: f64) -> f64 {
    1.0 + 0.3 * (2.0 * PI * y / L).cos()
}

fn coefficients(n: usize) -> ReynoldsCoefficients {
    let ys = midpoints(L, n);
    ReynoldsCoefficients::from_values(
        L,
        ys.iter().map(|&y| a_fn(y)).collect(),
        ys.iter().map(|&y| b_fn(y)).collect(),
        ys.iter().map(|&y| c_fn(y)).collect(),
        ys.iter().map(|&y| hbar_fn(y)).collect(),
    )
    .unwrap()
}

/// Flux integration on a fine grid: A p' + U₀B + C = q with q fixed by periodicity,
/// then the h̄-weighted zero-mean shift. Returns p at the fine nodes i L / m.
fn fine_oracle(m: usize, u0: f64) -> Vec<f64> {
    let d = L / m as f64;
    let ys = midpoints(L, m);
    let f: Vec<f64> = ys.iter().map(|&y| u0 * b_fn(y) + c_fn(y)).collect();
    let inv_a: Vec<f64> = ys.iter().map(|&y| 1.0 / a_fn(y)).collect();
    let q = f.iter().zip(&inv_a).map(|(f, ia)| f * ia).sum::<f64>() / inv_a.iter().sum::<f64>();
    let mut p = vec![0.0; m];
    for e in 0..m - 1 {
        p[e + 1] = p[e] + d * (q - f[e]) * inv_a[e];
    }
    let num: f64 = (0..m).map(|e| hbar_fn(ys[e]) * 0.5 * (p[e] + p[(e + 1) % m])).sum();
    let den: f64 = ys.iter().map(|&y| hbar_fn(y)).sum();
    let mean = num / den;
    p.iter().map(|v| v - mean).collect()
}

fn relative_l2(p: &[f64], oracle: &[f64]) -> f64 {
    let stride = oracle.len() / p.len();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, v) in p.iter().enumerate() {
        let o = oracle[i * stride];
        num += (v - o).powi(2);
        den += o * o;
    }
    (num / den).sqrt()
}

#[test]
fn matches_fine_oracle_on_256_nodes() {
    let oracle = fine_oracle(10_240, 1.0);
    let p = solve_pressure(&coefficients(256), 0, 1.0).unwrap();
    let err = relative_l2(&p.nodes, &oracle);
    assert!(err <= 1e-3, "relative L2 error {err}");
    assert!(p.flux_spread() <= 1e-10, "flux spread {}", p.flux_spread());
    assert!(p.residual < 1e-12);
}

#[test]
fn second_order_in_the_y1_grid() {
    let oracle = fine_oracle(10_240, 1.0);
    let errs: Vec<f64> = [32, 64, 128].iter().map(|&n| relative_l2(&solve_pressure(&coefficients(n), 0, 1.0).unwrap().nodes, &oracle)).collect();
    for k in 0..2 {
        let order = (errs[k] / errs[k + 1]).log2();
        assert!(order > 1.8, "order {order} from {errs:?}");
    }
}

#[test]
fn normalization_and_periodicity() {
    let c = coefficients(64);
    let p = solve_pressure(&c, 0, 0.7).unwrap();
    let scale = p.nodes.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(p.weighted_mean(&c.hbar).abs() <= 1e-12 * scale);
    assert!((p.value_at(0.0) - p.value_at(L)).abs() <= 1e-14 * scale);
}

#[test]
fn scaling_u0_scales_pressure_without_forcing() {
    let mut c = coefficients(64);
    c.c[0] = vec![0.0; 64];
    let p1 = solve_pressure(&c, 0, 1.0).unwrap();
    let p3 = solve_pressure(&c, 0, 3.0).unwrap();
    for (a, b) in p1.nodes.iter().zip(&p3.nodes) {
        assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-3));
    }
}

fn spec(n: usize, mesh: CellMesh) -> SamplingSpec {
    SamplingSpec { n_elements: n, mesh, penalty: PenaltySpec::default(), solver: Default::default() }
}

#[test]
fn classical_reynolds_coefficient_for_slow_variation() {
    let h0 = |y: f64| 1.0 + 0.3 * (2.0 * PI * y).cos();
    let p = RoughnessProfile::from_modes(1.0, 1.0, vec![Mode::slow(0.3, 1)], 0.7, 1.3).unwrap();
    let fluid = FluidParams { nu: 0.8, nu_r: 0.2, alpha: 1.0 };
    let lift = BoundaryLift::new(&p, TimeSignal::ONE, TimeSignal::ZERO);
    let s = sample_coefficients(&p, &fluid, &lift, &Forcing::zero(), &[0.0], &spec(8, CellMesh::new(4, 32)), None).unwrap();
    for (y, a) in s.coeffs.y1.iter().zip(&s.coeffs.a) {
        let exact = h0(*y).powi(3) / 3.0;
        assert!((a - exact).abs() <= 1e-3 * exact, "y1={y}: {a} vs {exact}");
    }
}

#[test]
fn y1_independent_profile_gives_constant_coefficients() {
    let p = RoughnessProfile::two_scale(1.0, 1.0, 0.0, 0.3).unwrap();
    let lift = BoundaryLift::new(&p, TimeSignal::ONE, TimeSignal::ZERO);
    let s = sample_coefficients(&p, &FluidParams::default(), &lift, &Forcing::zero(), &[0.0], &spec(4, CellMesh::square(8)), None).unwrap();
    let c = &s.coeffs;
    for v in [&c.a, &c.b, &c.hbar] {
        let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 1e-10 * v[0].abs(), "{v:?}");
    }
    assert!(c.coercivity_floor_holds());
    let p0 = solve_pressure(c, 0, 1.0).unwrap();
    assert!(p0.nodes.iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn unit_axial_force_gives_c_equal_minus_a() {
    let p = RoughnessProfile::two_scale(1.0, 1.0, 0.2, 0.3).unwrap();
    let lift = BoundaryLift::new(&p, TimeSignal::ZERO, TimeSignal::ZERO);
    let forcing = Forcing { f1: ScalarField::constant(1.0), ..Forcing::zero() };
    let s = sample_coefficients(&p, &FluidParams::default(), &lift, &forcing, &[0.0, 1.0], &spec(6, CellMesh::square(8)), None).unwrap();
    let c = &s.coeffs;
    for k in 0..2 {
        for (ci, ai) in c.c[k].iter().zip(&c.a) {
            assert!((ci + ai).abs() <= 1e-10 * ai);
        }
    }
    for (h, y) in c.hbar.iter().zip(&c.y1) {
        assert!((0.5..=1.5).contains(h), "hbar {h} at {y}");
    }
}
