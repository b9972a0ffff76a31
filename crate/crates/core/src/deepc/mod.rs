//! Direct data-driven predictive control: the trajectory is constrained to the
//! column span of a data Hankel matrix, `(Up; Yp; Uf; Yf) g = (u_ini; y_ini; u; y)`,
//! and `g` is regularized.

mod spec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indirect::estimate_initial_state;
use crate::linalg::{serde_rows, AffineSubspace};
use crate::plants::{Plant, StateSpaceModel};
use crate::signals::{HankelPartition, Trajectory};
use crate::solver::{SolveReport, SolverOptions};

pub use spec::{optimal_from_state, optimal_from_state_with, ChannelBounds, ControlSpec, CostWeight, PlannedInputs};
pub(crate) use spec::{input_to_trajectory, unstack, TrajectoryQp};

/// Optimal costs below this are treated as zero when forming percentages.
pub const PERCENT_FLOOR: f64 = 1e-9;

/// Penalty `h(g)` on the combination vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reg", rename_all = "snake_case")]
pub enum Regularizer {
    None,
    /// `λ‖g‖₁`.
    OneNorm { lambda: f64 },
    /// `λ‖g‖²`.
    TwoNormSq { lambda: f64 },
    /// `λ‖(I − Π)g‖²` with `Π` the projector onto the row space of `(Up; Yp; Uf)`.
    ProjTwoNormSq { lambda: f64 },
    /// `λ₁‖(I − Π)g‖² + λ₂‖g‖₁`.
    Hybrid { lambda1: f64, lambda2: f64 },
}

impl Regularizer {
    pub fn tag(&self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::OneNorm { .. } => "one_norm",
            Regularizer::TwoNormSq { .. } => "two_norm_sq",
            Regularizer::ProjTwoNormSq { .. } => "proj_two_norm_sq",
            Regularizer::Hybrid { .. } => "hybrid",
        }
    }

    /// `(λ or λ₁, λ₂)`.
    pub fn params(&self) -> (Option<f64>, Option<f64>) {
        match *self {
            Regularizer::None => (None, None),
            Regularizer::OneNorm { lambda }
            | Regularizer::TwoNormSq { lambda }
            | Regularizer::ProjTwoNormSq { lambda } => (Some(lambda), None),
            Regularizer::Hybrid { lambda1, lambda2 } => (Some(lambda1), Some(lambda2)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.params();
        for v in [a, b].into_iter().flatten() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{} coefficient must be finite and nonnegative, got {v}",
                    self.tag()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DeepcSolution {
    pub w_star: Trajectory,
    pub g_star: DVector<f64>,
    /// `c(w* − w_r)`, excluding the regularizer.
    pub predicted_cost: f64,
    /// `‖H g* − (w_ini; w*)‖`.
    pub constraint_residual: f64,
    pub report: SolveReport,
}

impl DeepcSolution {
    pub fn inputs(&self) -> DMatrix<f64> {
        self.w_star.input_matrix()
    }

    pub fn record(&self, reg: Regularizer, realized_cost_pct: Option<f64>, seed: Option<u64>) -> DeepcRecord {
        DeepcRecord {
            w_star: self.w_star.data().clone(),
            g_star_norm: self.g_star.norm(),
            predicted_cost: self.predicted_cost,
            realized_cost_pct,
            reg,
            seed,
        }
    }
}

/// JSON form of a solved instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepcRecord {
    #[serde(with = "serde_rows")]
    pub w_star: DMatrix<f64>,
    pub g_star_norm: f64,
    pub predicted_cost: f64,
    pub realized_cost_pct: Option<f64>,
    #[serde(flatten)]
    pub reg: Regularizer,
    pub seed: Option<u64>,
}

pub fn solve_deepc(
    part: &HankelPartition,
    w_ini: &Trajectory,
    spec: &ControlSpec,
    reg: Regularizer,
) -> Result<DeepcSolution> {
    solve_deepc_with(part, w_ini, spec, reg, &SolverOptions::default())
}

pub fn solve_deepc_with(
    part: &HankelPartition,
    w_ini: &Trajectory,
    spec: &ControlSpec,
    reg: Regularizer,
    opts: &SolverOptions,
) -> Result<DeepcSolution> {
    reg.validate()?;
    if part.tini() != spec.tini || part.horizon() != spec.horizon {
        return Err(Error::dim(format!(
            "partition has Tini={}, L={} but the spec asks for Tini={}, L={}",
            part.tini(),
            part.horizon(),
            spec.tini,
            spec.horizon
        )));
    }
    if part.channels() != spec.channels() || part.inputs() != spec.inputs() {
        return Err(Error::dim("data and control spec disagree on channel counts"));
    }
    spec.check_trajectory(w_ini, spec.tini, "w_ini")?;

    let n = part.columns();
    let hp = part.past_time_major();
    let hf = part.future_time_major();
    let w_ini_s = w_ini.stacked();

    let (g, w, report) = match reg {
        Regularizer::ProjTwoNormSq { lambda } if lambda > 0.0 => {
            solve_projected(part, &hp, &hf, &w_ini_s, spec, lambda, opts)?
        }
        _ => {
            let (regularizer, l1) = match reg {
                Regularizer::None | Regularizer::ProjTwoNormSq { .. } => (None, None),
                Regularizer::OneNorm { lambda } => (None, Some(lambda)),
                Regularizer::TwoNormSq { lambda } => (Some(DMatrix::identity(n, n) * (2.0 * lambda)), None),
                Regularizer::Hybrid { lambda1, lambda2 } => {
                    let r = (lambda1 > 0.0)
                        .then(|| part.regressor_row_space().complement_projector() * (2.0 * lambda1));
                    (r, Some(lambda2))
                }
            };
            let tq = TrajectoryQp {
                e: hf,
                f: DVector::zeros(spec.channels() * spec.horizon),
                equalities: Some((hp.clone(), w_ini_s.clone())),
                regularizer,
            };
            let sel = vec![true; n];
            let sol = tq.solve(spec, l1.map(|l| (l, sel.as_slice())), opts)?;
            (sol.z, sol.w, sol.report)
        }
    };
    let constraint_residual = (&hp * &g - &w_ini_s).norm();
    let w_star = Trajectory::from_stacked(&w, spec.channels(), spec.inputs())?;
    Ok(DeepcSolution {
        predicted_cost: spec.cost_stacked(&w),
        w_star,
        g_star: g,
        constraint_residual,
        report,
    })
}

/// Projection-regularized problem in the coordinates `g = V₁a + V₂b`, where `V₁`
/// spans the row space of `(Up; Yp; Uf)` and `V₂` its kernel. The penalty is then
/// `λ‖b‖²` exactly, which keeps very large `λ` well conditioned.
fn solve_projected(
    part: &HankelPartition,
    hp: &DMatrix<f64>,
    hf: &DMatrix<f64>,
    w_ini: &DVector<f64>,
    spec: &ControlSpec,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, DVector<f64>, SolveReport)> {
    let rows = part.regressor_row_space();
    let v1 = rows.basis();
    let v2 = rows.kernel_basis();
    // The past block lies in the row space, so only `a` enters the prefix constraint.
    let sub = AffineSubspace::new(&(hp * v1), w_ini, opts.feas_tol)?;
    let (ka, kb) = (sub.null_basis.ncols(), v2.ncols());
    let n = part.columns();
    let mut basis = DMatrix::zeros(n, ka + kb);
    basis.columns_mut(0, ka).copy_from(&(v1 * &sub.null_basis));
    basis.columns_mut(ka, kb).copy_from(&v2);
    let g0 = v1 * &sub.particular;
    let mut reg = DMatrix::zeros(ka + kb, ka + kb);
    for i in ka..ka + kb {
        reg[(i, i)] = 2.0 * lambda;
    }
    let tq = TrajectoryQp {
        e: hf * &basis,
        f: hf * &g0,
        equalities: None,
        regularizer: Some(reg),
    };
    let sol = tq.solve(spec, None, opts)?;
    let g = g0 + basis * sol.z;
    Ok((g, sol.w, sol.report))
}

/// State at the start of the horizon, reconstructed from the prefix.
pub fn state_after_prefix(model: &StateSpaceModel, w_ini: &Trajectory) -> Result<DVector<f64>> {
    let x0 = estimate_initial_state(model, w_ini)?;
    let (_, x) = model.simulate_with_state(&x0, &w_ini.input_matrix())?;
    Ok(x)
}

/// Optimal trajectory and cost for the true model, the state being recovered from `w_ini`.
pub fn ground_truth_optimum(model: &StateSpaceModel, w_ini: &Trajectory, spec: &ControlSpec) -> Result<(Trajectory, f64)> {
    spec.check_trajectory(w_ini, spec.tini, "w_ini")?;
    let x = state_after_prefix(model, w_ini)?;
    let plan = optimal_from_state(model, &x, spec)?;
    Ok((plan.predicted, plan.cost))
}

/// `100·(c − c*)/c*`, or the absolute cost `c` when `c* < PERCENT_FLOOR`.
pub fn percent_error(cost: f64, c_star: f64) -> f64 {
    if c_star < PERCENT_FLOOR {
        cost
    } else {
        100.0 * (cost - c_star) / c_star
    }
}

/// Applies `u` to the true plant from `x0` and returns the resulting trajectory and its cost.
pub fn realized_cost<P: Plant + ?Sized>(
    plant: &P,
    x0: &DVector<f64>,
    u: &DMatrix<f64>,
    spec: &ControlSpec,
) -> Result<(Trajectory, f64)> {
    if u.nrows() != spec.horizon {
        return Err(Error::dim(format!("{} inputs for horizon {}", u.nrows(), spec.horizon)));
    }
    let w = plant.simulate(x0, u)?;
    let c = spec.cost(&w)?;
    Ok((w, c))
}

/// Percentage increase of the realized cost over the ground-truth optimum `c_star`.
pub fn realized_error<P: Plant + ?Sized>(
    plant: &P,
    u: &DMatrix<f64>,
    x0: &DVector<f64>,
    spec: &ControlSpec,
    c_star: f64,
) -> Result<f64> {
    let (_, c) = realized_cost(plant, x0, u, spec)?;
    Ok(percent_error(c, c_star))
}
