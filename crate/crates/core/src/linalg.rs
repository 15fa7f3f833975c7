//! Sparse storage and the linear solvers used by the cell and strip problems.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("conjugate gradients stagnated after {iterations} iterations (relative residual {residual:e})")]
    Stagnation { iterations: usize, residual: f64 },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("non-finite value in linear system")]
    NonFinite,
}

/// Which linear solver to use. `Auto` picks per problem class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    #[default]
    Auto,
    Cg,
    Dense,
    SparseLu,
}

pub const CG_RTOL: f64 = 1e-12;
pub const DENSE_LIMIT: usize = 2500;

/// Accumulates (row, col, value) entries; duplicates are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder { n, entries: Vec::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n: self.n, row_ptr, cols, vals }
    }
}

/// Square compressed-sparse-row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// max |A_ij − A_ji| over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// x ↦ xᵀ A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n).map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>()).sum()
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>, LinearSolveError> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push(Triplet::new(i, j, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &t)
            .map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// ‖b − Ax‖ / ‖b‖
    pub relative_residual: f64,
    /// ‖b − Ax‖ / (‖A‖∞ ‖x‖ + ‖b‖)
    pub backward_error: f64,
}

enum Backend {
    Cg,
    Dense(faer::linalg::solvers::PartialPivLu<f64>),
    Sparse(faer::sparse::linalg::solvers::Lu<usize, f64>),
}

/// A matrix prepared for repeated solves with different right-hand sides.
pub struct LinearSystem {
    matrix: CsrMatrix,
    backend: Backend,
}

impl LinearSystem {
    /// With `Auto`, well-conditioned SPD systems (`spd`) use dense LU below `DENSE_LIMIT`
    /// unknowns and CG above; everything else goes to sparse LU.
    pub fn new(matrix: CsrMatrix, choice: SolverChoice, spd: bool) -> Result<Self, LinearSolveError> {
        if matrix.vals.iter().any(|v| !v.is_finite()) {
            return Err(LinearSolveError::NonFinite);
        }
        let choice = match choice {
            SolverChoice::Auto if spd && matrix.n < DENSE_LIMIT => SolverChoice::Dense,
            SolverChoice::Auto if spd => SolverChoice::Cg,
            SolverChoice::Auto => SolverChoice::SparseLu,
            c => c,
        };
        let backend = match choice {
            SolverChoice::Cg => Backend::Cg,
            SolverChoice::Dense => Backend::Dense(matrix.to_dense().partial_piv_lu()),
            _ => {
                let a = matrix.to_faer()?;
                Backend::Sparse(a.sp_lu().map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))?)
            }
        };
        Ok(LinearSystem { matrix, backend })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolveStats), LinearSolveError> {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(LinearSolveError::NonFinite);
        }
        let bnorm = norm(b);
        if bnorm == 0.0 {
            return Ok((vec![0.0; b.len()], SolveStats::default()));
        }
        let (x, iterations) = match &self.backend {
            Backend::Cg => cg_jacobi(&self.matrix, b, CG_RTOL, 20 * self.matrix.n.max(1))?,
            Backend::Dense(lu) => {
                let mut x = direct_solve(|r| lu.solve(r), b);
                self.refine(&mut x, b, |r| lu.solve(r));
                (x, 0)
            }
            Backend::Sparse(lu) => {
                let mut x = direct_solve(|r| lu.solve(r), b);
                self.refine(&mut x, b, |r| lu.solve(r));
                (x, 0)
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinearSolveError::NonFinite);
        }
        let rn = norm(&residual(&self.matrix, &x, b));
        let scale = self.matrix.norm_inf() * norm(&x) + bnorm;
        Ok((x, SolveStats { iterations, relative_residual: rn / bnorm, backward_error: rn / scale }))
    }

    // one step of iterative refinement; penalty systems lose a few digits otherwise
    fn refine(&self, x: &mut [f64], b: &[f64], solve: impl Fn(&Col<f64>) -> Col<f64>) {
        let r = residual(&self.matrix, x, b);
        let d = direct_solve(&solve, &r);
        for (xi, di) in x.iter_mut().zip(d) {
            *xi += di;
        }
    }
}

fn direct_solve(solve: impl Fn(&Col<f64>) -> Col<f64>, b: &[f64]) -> Vec<f64> {
    let rhs = Col::<f64>::from_fn(b.len(), |i| b[i]);
    let x = solve(&rhs);
    (0..b.len()).map(|i| x[i]).collect()
}

pub fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients.
pub fn cg_jacobi(a: &CsrMatrix, b: &[f64], rtol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), LinearSolveError> {
    let n = a.n;
    let inv_d: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        if norm(&r) <= rtol * bnorm {
            return Ok((x, it));
        }
        let ap = a.matvec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(LinearSolveError::Stagnation { iterations: it, residual: norm(&r) / bnorm });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm(&r) / bnorm;
    if res <= rtol {
        Ok((x, max_iter))
    } else {
        Err(LinearSolveError::Stagnation { iterations: max_iter, residual: res })
    }
}

/// Eigenvalues of the symmetric pencil K x = λ M x with M symmetric positive definite, ascending.
pub fn generalized_symmetric_eigenvalues(k: &Mat<f64>, m: &Mat<f64>) -> Result<Vec<f64>, LinearSolveError> {
    let llt = m.llt(faer::Side::Lower).map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))?;
    let l = llt.L().to_owned();
    let n = k.nrows();
    // C = L⁻¹ K L⁻ᵀ
    let mut y = k.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), y.as_mut(), faer::Par::Seq);
    let mut yt = y.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), yt.as_mut(), faer::Par::Seq);
    let c = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (yt[(i, j)] + yt[(j, i)]));
    c.self_adjoint_eigenvalues(faer::Side::Lower).map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = TripletBuilder::new(n);
        for i in 0..n {
            t.add(i, i, 2.0);
            if i + 1 < n {
                t.add(i, i + 1, -1.0);
                t.add(i + 1, i, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = TripletBuilder::new(2);
        t.add(0, 0, 1.0);
        t.add(0, 0, 2.5);
        t.add(1, 0, -1.0);
        let a = t.build();
        assert_eq!(a.get(0, 0), 3.5);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn all_backends_agree() {
        let a = laplace_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut sols = Vec::new();
        for c in [SolverChoice::Cg, SolverChoice::Dense, SolverChoice::SparseLu] {
            let s = LinearSystem::new(a.clone(), c, true).unwrap();
            let (x, st) = s.solve(&b).unwrap();
            assert!(st.relative_residual < 1e-11, "{c:?} {}", st.relative_residual);
            sols.push(x);
        }
        for s in &sols[1..] {
            for (u, v) in s.iter().zip(&sols[0]) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let s = LinearSystem::new(laplace_1d(4), SolverChoice::Auto, true).unwrap();
        assert_eq!(s.solve(&[0.0; 4]).unwrap().0, vec![0.0; 4]);
    }

    #[test]
    fn generalized_eigs_of_scaled_identity() {
        let k = Mat::<f64>::from_fn(3, 3, |i, j| if i == j { 6.0 } else { 0.0 });
        let m = Mat::<f64>::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.0 });
        let e = generalized_symmetric_eigenvalues(&k, &m).unwrap();
        for v in e {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }
}
