#![allow(dead_code)]

/// Top boundary condition for the 1D oracle.
#[derive(Clone, Copy)]
pub enum Top {
    Dirichlet(f64),
    /// u'(1) = 0
    Neumann,
}

/// Second-order finite differences for u'' = r on [0, 1], u(0) = bottom.
/// Returns values on the uniform grid with `n` cells.
pub fn fd_two_point(n: usize, r: impl Fn(f64) -> f64, bottom: f64, top: Top) -> Vec<f64> {
    let hy = 1.0 / n as f64;
    // unknowns u_1..u_n (u_n dropped for Dirichlet top)
    let m = match top {
        Top::Dirichlet(_) => n - 1,
        Top::Neumann => n,
    };
    let mut sub = vec![1.0; m];
    let mut diag = vec![-2.0; m];
    let mut sup = vec![1.0; m];
    let mut rhs: Vec<f64> = (1..=m).map(|k| hy * hy * r(k as f64 * hy)).collect();
    rhs[0] -= bottom;
    match top {
        Top::Dirichlet(b) => rhs[m - 1] -= b,
        Top::Neumann => {
            // ghost node u_{n+1} = u_{n-1}; halve the last row to keep it symmetric
            sub[m - 1] = 1.0;
            diag[m - 1] = -1.0;
            rhs[m - 1] *= 0.5;
        }
    }
    sup[m - 1] = 0.0;
    // Thomas
    for k in 1..m {
        let w = sub[k] / diag[k - 1];
        diag[k] -= w * sup[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    let mut u = vec![0.0; m];
    u[m - 1] = rhs[m - 1] / diag[m - 1];
    for k in (0..m - 1).rev() {
        u[k] = (rhs[k] - sup[k] * u[k + 1]) / diag[k];
    }
    let mut out = Vec::with_capacity(n + 1);
    out.push(bottom);
    out.extend(u);
    if let Top::Dirichlet(b) = top {
        out.push(b);
    }
    out
}

/// Linear interpolation of grid values at y ∈ [0, 1].
pub fn sample(grid: &[f64], y: f64) -> f64 {
    let n = grid.len() - 1;
    let s = (y * n as f64).clamp(0.0, n as f64);
    let k = (s.floor() as usize).min(n - 1);
    let t = s - k as f64;
    (1.0 - t) * grid[k] + t * grid[k + 1]
}

/// The default bump (1 − (s/a)²)³ on [0, a) and its second derivative.
pub fn bump(a: f64, s: f64) -> f64 {
    if s >= a {
        return 0.0;
    }
    let r = s / a;
    (1.0 - r * r).powi(3)
}

pub fn bump_dd(a: f64, s: f64) -> f64 {
    if s >= a {
        return 0.0;
    }
    let r = s / a;
    -6.0 / (a * a) * (1.0 - r * r) * (1.0 - 5.0 * r * r)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
