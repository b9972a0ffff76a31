use nalgebra::{DMatrix, DVector};

use super::eqp::{solve_reduced, symmetrize};
use super::{subgradient_violation, EqQp, SolveReport, SolverOptions};
use crate::error::Result;
use crate::linalg::{least_squares, AffineSubspace};

const RELAXATION: f64 = 1.6;
const ADAPT_EVERY: usize = 25;
const POLISH_EVERY: usize = 25;
/// Residual ratio that triggers a penalty rescale.
const ADAPT_RATIO: f64 = 10.0;
/// Active-set repairs tried per polish.
const MAX_REFINE: usize = 50;

struct Problem<'a> {
    qp: &'a EqQp,
    weights: &'a DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    opt_scale: f64,
}

impl Problem<'_> {
    fn prox(&self, v: &DVector<f64>, rho: f64) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| {
            let t = self.weights[i] / rho;
            let s = if v[i] > t {
                v[i] - t
            } else if v[i] < -t {
                v[i] + t
            } else if t > 0.0 {
                0.0
            } else {
                v[i]
            };
            s.clamp(self.lower[i], self.upper[i])
        })
    }

    fn l1(&self, x: &DVector<f64>) -> f64 {
        x.iter().zip(self.weights.iter()).map(|(v, w)| w * v.abs()).sum()
    }

    fn bound_violation(&self, x: &DVector<f64>) -> f64 {
        (0..x.len())
            .map(|i| (self.lower[i] - x[i]).max(x[i] - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Reduced-space data: `x = x₀ + B c` with `BᵀQB = diag(eig)`.
struct Reduced {
    x0: DVector<f64>,
    basis: DMatrix<f64>,
    eig: DVector<f64>,
    /// `Bᵀ(Qx₀ + q)`.
    slope: DVector<f64>,
    f0: f64,
}

impl Reduced {
    fn new(qp: &EqQp, sub: &AffineSubspace) -> Self {
        let x0 = sub.particular.clone();
        let zb = &sub.null_basis;
        let (basis, eig) = if zb.ncols() > 0 {
            let mut hr = zb.transpose() * (&qp.hessian * zb);
            symmetrize(&mut hr);
            let e = hr.symmetric_eigen();
            (zb * e.eigenvectors, e.eigenvalues.map(|l| l.max(0.0)))
        } else {
            (DMatrix::zeros(x0.len(), 0), DVector::zeros(0))
        };
        let slope = basis.transpose() * qp.gradient(&x0);
        let f0 = qp.objective(&x0);
        Reduced {
            x0,
            basis,
            eig,
            slope,
            f0,
        }
    }

    /// argmin over the affine set of `f(x) + ρ/2 ‖x − target‖²`, with `f(x)`.
    fn x_update(&self, target: &DVector<f64>, rho: f64) -> (DVector<f64>, f64) {
        if self.basis.ncols() == 0 {
            return (self.x0.clone(), self.f0);
        }
        let rhs = self.basis.transpose() * (target * rho) - &self.slope;
        let c = DVector::from_fn(rhs.len(), |i, _| rhs[i] / (self.eig[i] + rho));
        let f = self.f0
            + self.slope.dot(&c)
            + 0.5 * c.iter().zip(self.eig.iter()).map(|(ci, l)| l * ci * ci).sum::<f64>();
        (&self.x0 + &self.basis * c, f)
    }
}

pub(super) fn solve(qp: &EqQp, weights: &DVector<f64>, opts: &SolverOptions) -> Result<SolveReport> {
    let n = qp.dim();
    let (lower, upper) = qp.bounds.clone().unwrap_or_else(|| {
        (
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    });
    let opt_scale = 1.0f64
        .max(weights.iter().copied().fold(0.0, f64::max))
        .max(qp.linear.amax());
    let prob = Problem {
        qp,
        weights,
        lower,
        upper,
        opt_scale,
    };
    let sub = AffineSubspace::new(&qp.eq_matrix, &qp.eq_rhs, opts.feas_tol)?;
    let red = Reduced::new(qp, &sub);

    let mut rho = opts.rho;
    let mut x = red.x0.clone();
    let mut z = prob.prox(&x, rho);
    let mut u = DVector::zeros(n);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut trace = Vec::new();
    let mut last_signature: Option<Vec<i8>> = None;

    for it in 1..=opts.max_iter {
        let (xn, fx) = red.x_update(&(&z - &u), rho);
        x = xn;
        let obj = fx + prob.l1(&x);
        let x_hat = &x * RELAXATION + &z * (1.0 - RELAXATION);
        let z_prev = std::mem::replace(&mut z, prob.prox(&(&x_hat + &u), rho));
        u += &x_hat - &z;

        if prob.bound_violation(&x) <= opts.feas_tol * (1.0 + x.amax())
            && best.as_ref().map_or(true, |(b, _)| obj < *b)
        {
            best = Some((obj, x.clone()));
        }
        trace.push(best.as_ref().map_or(obj, |(b, _)| *b));

        let r_prim = (&x - &z).amax();
        let r_dual = rho * (&z - &z_prev).amax();
        let scale_p = x.amax().max(z.amax()).max(1.0);
        let scale_d = (rho * u.amax()).max(1.0);
        let (np, nd) = (r_prim / scale_p, r_dual / scale_d);

        let tight = np <= 1e-7 && nd <= 1e-7;
        let loose = np <= 1e-3 && nd <= 1e-3;
        if tight || (loose && it % POLISH_EVERY == 0) {
            let sig = signature(&prob, &z);
            if last_signature.as_ref() != Some(&sig) || tight {
                if let Some(rep) = polish(&prob, &z, opts, it, &mut trace) {
                    return Ok(rep);
                }
                last_signature = Some(sig);
            }
        }

        if it % ADAPT_EVERY == 0 && np.max(nd) > 0.0 {
            // A stalled consensus copy (nd = 0) needs a larger penalty.
            let ratio = if nd > 0.0 { np / nd } else { f64::INFINITY };
            if !(1.0 / ADAPT_RATIO..=ADAPT_RATIO).contains(&ratio) {
                let new_rho = (rho * ratio.sqrt()).clamp(rho * 1e-3, rho * 1e3).clamp(1e-8, 1e12);
                u *= rho / new_rho;
                rho = new_rho;
            }
        }
    }

    if let Some(rep) = polish(&prob, &z, opts, opts.max_iter, &mut trace) {
        return Ok(rep);
    }
    let sol = best.map(|(_, b)| b).unwrap_or(x);
    let nu = -sub.multipliers_for(&qp.gradient(&sol));
    let zero_tol = 1e-12 * (1.0 + sol.amax());
    let viol = subgradient_violation(qp, weights, &sol, &nu, zero_tol);
    Ok(SolveReport {
        objective: qp.objective(&sol) + prob.l1(&sol),
        constraint_residual: (&qp.eq_matrix * &sol - &qp.eq_rhs).norm(),
        optimality_residual: viol,
        solution: sol,
        multipliers: nu,
        iterations: opts.max_iter,
        converged: false,
        objective_trace: trace,
    })
}

/// Active-set pattern of the consensus iterate: -1 lower, 0 zero, 1 upper, 2 free.
fn signature(prob: &Problem, z: &DVector<f64>) -> Vec<i8> {
    (0..z.len())
        .map(|i| {
            if z[i] == prob.lower[i] {
                -1
            } else if z[i] == prob.upper[i] {
                1
            } else if prob.weights[i] > 0.0 && z[i] == 0.0 {
                0
            } else {
                2
            }
        })
        .collect()
}

/// Fixes the coordinates the consensus iterate puts on a kink (zero or a bound),
/// solves the remaining equality-constrained QP exactly and accepts the result
/// if it satisfies the full optimality conditions. A nearly right support is
/// repaired by a few active-set moves: free coordinates whose sign flips are
/// pinned to zero, and the zero coordinate with the largest subgradient
/// violation is released.
fn polish(prob: &Problem, z: &DVector<f64>, opts: &SolverOptions, it: usize, trace: &mut Vec<f64>) -> Option<SolveReport> {
    let n = prob.qp.dim();
    let mut sig = signature(prob, z);
    let mut signs: Vec<f64> = z.iter().map(|v| if *v > 0.0 { 1.0 } else { -1.0 }).collect();
    let tol = opts.opt_tol * prob.opt_scale;
    for _ in 0..MAX_REFINE {
        let (x, nu) = solve_on_support(prob, &sig, &signs, opts)?;
        let zero_tol = 1e-12 * (1.0 + x.amax());
        let flipped: Vec<usize> = (0..n)
            .filter(|&i| sig[i] == 2 && prob.weights[i] > 0.0 && x[i] * signs[i] < -zero_tol)
            .collect();
        if !flipped.is_empty() {
            for i in flipped {
                sig[i] = 0;
            }
            continue;
        }
        if prob.bound_violation(&x) > opts.feas_tol * (1.0 + x.amax()) {
            return None;
        }
        let constraint_residual = (&prob.qp.eq_matrix * &x - &prob.qp.eq_rhs).norm();
        if constraint_residual > opts.feas_tol * (1.0 + prob.qp.eq_rhs.norm()) {
            return None;
        }
        let viol = subgradient_violation(prob.qp, prob.weights, &x, &nu, zero_tol);
        if viol <= tol {
            let objective = prob.qp.objective(&x) + prob.l1(&x);
            trace.push(trace.last().map_or(objective, |&t| t.min(objective)));
            return Some(SolveReport {
                solution: x,
                objective,
                constraint_residual,
                optimality_residual: viol,
                multipliers: nu,
                iterations: it,
                converged: true,
                objective_trace: std::mem::take(trace),
            });
        }
        let r = prob.qp.gradient(&x) + prob.qp.eq_matrix.transpose() * &nu;
        let worst = (0..n)
            .filter(|&i| sig[i] == 0)
            .map(|i| (i, r[i].abs() - prob.weights[i]))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if worst.1 <= tol {
            return None;
        }
        sig[worst.0] = 2;
        signs[worst.0] = if r[worst.0] > 0.0 { -1.0 } else { 1.0 };
    }
    None
}

/// Exact minimizer with the non-free coordinates pinned and the free ones on a
/// fixed sign pattern, plus the equality multipliers from the free coordinates.
fn solve_on_support(
    prob: &Problem,
    sig: &[i8],
    signs: &[f64],
    opts: &SolverOptions,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let qp = prob.qp;
    let n = qp.dim();
    let free: Vec<usize> = (0..n).filter(|&i| sig[i] == 2).collect();
    let mut x = DVector::from_fn(n, |i, _| match sig[i] {
        -1 => prob.lower[i],
        1 => prob.upper[i],
        _ => 0.0,
    });
    let k = qp.eq_matrix.nrows();
    let nf = free.len();
    if nf > 0 {
        let q_ff = DMatrix::from_fn(nf, nf, |a, b| qp.hessian[(free[a], free[b])]);
        let q_full_x = &qp.hessian * &x;
        let lin = DVector::from_fn(nf, |a, _| {
            let i = free[a];
            qp.linear[i] + q_full_x[i] + prob.weights[i] * signs[i]
        });
        let a_f = DMatrix::from_fn(k, nf, |r, a| qp.eq_matrix[(r, free[a])]);
        let rhs = &qp.eq_rhs - &qp.eq_matrix * &x;
        let (xf, _) = solve_reduced(&q_ff, &lin, &a_f, &rhs, opts.feas_tol).ok()?;
        for (a, &i) in free.iter().enumerate() {
            x[i] = xf[a];
        }
    }
    let nu = if k > 0 && nf > 0 {
        let grad = qp.gradient(&x);
        let g_free = DMatrix::from_fn(nf, 1, |a, _| grad[free[a]] + prob.weights[free[a]] * signs[free[a]]);
        let a_free = DMatrix::from_fn(nf, k, |a, r| qp.eq_matrix[(r, free[a])]);
        -least_squares(&a_free, &g_free).ok()?.column(0).into_owned()
    } else {
        DVector::zeros(k)
    };
    Some((x, nu))
}
