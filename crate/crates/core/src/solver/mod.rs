//! Quadratic programs with equality constraints, optional box bounds and an
//! optional weighted ℓ1 term.
//!
//! Without bounds or ℓ1 weight the problem is solved exactly through the
//! null-space of the equality constraints. Otherwise an ADMM splitting runs on
//! a consensus copy of the variables and is finished by an active-set polish
//! that re-solves the equality-constrained problem on the identified support.

mod admm;
mod eqp;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use eqp::solve_reduced;
pub(crate) use eqp::symmetrize;

/// `min ½ zᵀQz + qᵀz  s.t.  Az = b,  lo ≤ z ≤ hi`.
#[derive(Debug, Clone)]
pub struct EqQp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub bounds: Option<(DVector<f64>, DVector<f64>)>,
}

impl EqQp {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        EqQp {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            bounds: None,
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.bounds = Some((lower, upper));
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.hessian * z + &self.linear
    }

    fn has_finite_bounds(&self) -> bool {
        self.bounds.as_ref().is_some_and(|(lo, hi)| {
            lo.iter().any(|v| v.is_finite()) || hi.iter().any(|v| v.is_finite())
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.shape() != (n, n) {
            return Err(Error::dim(format!(
                "Hessian is {:?} for {n} variables",
                self.hessian.shape()
            )));
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(Error::dim(format!(
                "equality block is {:?} with rhs of length {}",
                self.eq_matrix.shape(),
                self.eq_rhs.len()
            )));
        }
        let asym = (&self.hessian - self.hessian.transpose()).norm();
        if asym > 1e-12 * self.hessian.norm() {
            return Err(Error::InvalidArgument(format!(
                "Hessian is not symmetric (‖Q − Qᵀ‖ = {asym:.3e})"
            )));
        }
        if let Some((lo, hi)) = &self.bounds {
            if lo.len() != n || hi.len() != n {
                return Err(Error::dim("bound vectors must match the variable count"));
            }
            if lo.iter().zip(hi.iter()).any(|(l, h)| l > h || l.is_nan() || h.is_nan()) {
                return Err(Error::InvalidArgument("empty box bounds".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            opt_tol: 1e-6,
            max_iter: 10_000,
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    /// Includes the ℓ1 term when present.
    pub objective: f64,
    pub constraint_residual: f64,
    pub optimality_residual: f64,
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective of the best feasible iterate after each ADMM iteration.
    pub objective_trace: Vec<f64>,
}

/// Exact null-space solve without bounds; ADMM with active-set polish when
/// finite bounds are present.
pub fn solve_eq_qp(p: &EqQp, opts: &SolverOptions) -> Result<SolveReport> {
    p.validate()?;
    if p.has_finite_bounds() {
        let weights = DVector::zeros(p.dim());
        admm::solve(p, &weights, opts)
    } else {
        eqp::solve_exact(p, opts)
    }
}

/// `min ½ zᵀQz + qᵀz + λ ‖S z‖₁  s.t.  Az = b` where `selector[i]` marks the
/// coordinates carrying the ℓ1 weight.
pub fn solve_l1_qp(p: &EqQp, lambda: f64, selector: &[bool], opts: &SolverOptions) -> Result<SolveReport> {
    p.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("λ must be nonnegative, got {lambda}")));
    }
    if selector.len() != p.dim() {
        return Err(Error::dim("ℓ1 selector length must match the variable count"));
    }
    let weights = DVector::from_iterator(
        selector.len(),
        selector.iter().map(|&s| if s { lambda } else { 0.0 }),
    );
    if lambda == 0.0 && !p.has_finite_bounds() {
        return eqp::solve_exact(p, opts);
    }
    admm::solve(p, &weights, opts)
}

/// Largest violation of `−∇f(z) − Aᵀν ∈ ∂(Σ wᵢ|zᵢ| + ι_box)(z)` over all coordinates.
pub fn subgradient_violation(
    p: &EqQp,
    weights: &DVector<f64>,
    z: &DVector<f64>,
    multipliers: &DVector<f64>,
    zero_tol: f64,
) -> f64 {
    let r = p.gradient(z) + p.eq_matrix.transpose() * multipliers;
    let mut worst: f64 = 0.0;
    for i in 0..z.len() {
        let (lo, hi) = p
            .bounds
            .as_ref()
            .map_or((f64::NEG_INFINITY, f64::INFINITY), |(l, h)| (l[i], h[i]));
        let (sub_lo, sub_hi) = subdifferential(z[i], weights[i], lo, hi, zero_tol);
        let g = -r[i];
        let v = if g < sub_lo {
            sub_lo - g
        } else if g > sub_hi {
            g - sub_hi
        } else {
            0.0
        };
        worst = worst.max(v);
    }
    worst
}

/// Interval `∂(w|·| + ι_[lo,hi])(x)`.
fn subdifferential(x: f64, w: f64, lo: f64, hi: f64, zero_tol: f64) -> (f64, f64) {
    let (mut a, mut b) = if w > 0.0 && x.abs() <= zero_tol {
        (-w, w)
    } else if x > 0.0 {
        (w, w)
    } else {
        (-w, -w)
    };
    if w == 0.0 {
        a = 0.0;
        b = 0.0;
    }
    let at_lo = lo.is_finite() && x <= lo + zero_tol;
    let at_hi = hi.is_finite() && x >= hi - zero_tol;
    if at_lo {
        a = f64::NEG_INFINITY;
    }
    if at_hi {
        b = f64::INFINITY;
    }
    (a, b)
}

#[cfg(test)]
mod tests;
