use nalgebra::{DMatrix, DVector};

use super::{EqQp, SolveReport, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg::AffineSubspace;

/// Relative eigenvalue floor below which a reduced-Hessian direction counts as flat.
const FLAT_RTOL: f64 = 1e-13;

pub(super) fn solve_exact(p: &EqQp, opts: &SolverOptions) -> Result<SolveReport> {
    let (z, nu) = solve_reduced(&p.hessian, &p.linear, &p.eq_matrix, &p.eq_rhs, opts.feas_tol)?;
    let constraint_residual = (&p.eq_matrix * &z - &p.eq_rhs).norm();
    let optimality_residual = (p.gradient(&z) + p.eq_matrix.transpose() * &nu).norm();
    let objective = p.objective(&z);
    Ok(SolveReport {
        solution: z,
        objective,
        constraint_residual,
        optimality_residual,
        multipliers: nu,
        iterations: 1,
        converged: true,
        objective_trace: vec![objective],
    })
}

/// Null-space solve of `min ½zᵀQz + qᵀz s.t. Az = b`; returns the minimizer and
/// the minimum-norm multipliers of `Qz + q + Aᵀν = 0`. Flat directions of the
/// reduced Hessian with zero slope are resolved by the minimum-norm choice.
pub fn solve_reduced(
    hessian: &DMatrix<f64>,
    linear: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    feas_tol: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let sub = AffineSubspace::new(a, b, feas_tol)?;
    let x0 = &sub.particular;
    let z_basis = &sub.null_basis;
    let mut z = x0.clone();
    if z_basis.ncols() > 0 {
        let qz = hessian * z_basis;
        let mut hr = z_basis.transpose() * &qz;
        symmetrize(&mut hr);
        let gr = z_basis.transpose() * (hessian * x0 + linear);
        let v = reduced_newton_step(hr, &gr)?;
        z += z_basis * v;
    }
    let grad = hessian * &z + linear;
    let nu = -sub.multipliers_for(&grad);
    Ok((z, nu))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Solves `H v = −g` for PSD `H`; Cholesky when it succeeds with a small
/// residual, otherwise a truncated eigendecomposition with an unboundedness test.
fn reduced_newton_step(h: DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.amax().max(f64::MIN_POSITIVE);
    if let Some(chol) = h.clone().cholesky() {
        let v = -chol.solve(g);
        let res = (&h * &v + g).norm();
        if res <= 1e-9 * (g.norm() + scale * v.norm()).max(f64::MIN_POSITIVE) {
            return Ok(v);
        }
    }
    let eig = h.symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let floor = FLAT_RTOL * lmax.max(f64::MIN_POSITIVE);
    let coeffs = eig.eigenvectors.transpose() * g;
    let gnorm = g.norm();
    let mut step = DVector::zeros(coeffs.len());
    for i in 0..coeffs.len() {
        let l = eig.eigenvalues[i];
        if l > floor {
            step[i] = -coeffs[i] / l;
        } else if coeffs[i].abs() > 1e-8 * gnorm.max(1.0) || l < -1e-8 * lmax {
            return Err(Error::Unbounded);
        }
    }
    Ok(&eig.eigenvectors * step)
}
