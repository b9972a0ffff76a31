use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plants::StateSpaceModel;
use crate::signals::Trajectory;
use crate::solver::{solve_eq_qp, solve_l1_qp, EqQp, SolveReport, SolverOptions};

/// Weight of the tracking cost `(w − w_r)ᵀ W (w − w_r)` on the stacked horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum CostWeight {
    /// Dense `qL × qL` PSD matrix.
    Full(DMatrix<f64>),
    /// `I_L ⊗ diag(weights)`, one nonnegative weight per channel.
    PerChannel(Vec<f64>),
}

/// Per-channel box `lower ≤ w(t) ≤ upper`, applied at every horizon sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Finite-horizon tracking problem shared by all controllers.
#[derive(Debug, Clone)]
pub struct ControlSpec {
    pub tini: usize,
    pub horizon: usize,
    pub reference: Trajectory,
    pub weight: CostWeight,
    pub bounds: Option<ChannelBounds>,
}

impl ControlSpec {
    pub fn new(tini: usize, horizon: usize, reference: Trajectory, weight: CostWeight) -> Result<Self> {
        if tini == 0 || horizon == 0 {
            return Err(Error::InvalidArgument("Tini and L must be positive".into()));
        }
        if reference.len() != horizon {
            return Err(Error::dim(format!(
                "reference has {} samples for horizon {horizon}",
                reference.len()
            )));
        }
        let q = reference.channels();
        match &weight {
            CostWeight::PerChannel(w) => {
                if w.len() != q {
                    return Err(Error::dim(format!("{} channel weights for {q} channels", w.len())));
                }
                if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidArgument("channel weights must be finite and nonnegative".into()));
                }
            }
            CostWeight::Full(w) => {
                let n = q * horizon;
                if w.shape() != (n, n) {
                    return Err(Error::dim(format!("weight is {:?}, expected {n}×{n}", w.shape())));
                }
                let scale = w.amax().max(f64::MIN_POSITIVE);
                if (w - w.transpose()).amax() > 1e-12 * scale {
                    return Err(Error::InvalidArgument("weight matrix is not symmetric".into()));
                }
                let min_eig = w.clone().symmetric_eigen().eigenvalues.min();
                if min_eig < -1e-10 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "weight matrix is not PSD (λ_min = {min_eig:.3e})"
                    )));
                }
            }
        }
        Ok(ControlSpec {
            tini,
            horizon,
            reference,
            weight,
            bounds: None,
        })
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let q = self.channels();
        if lower.len() != q || upper.len() != q {
            return Err(Error::dim(format!("bounds need {q} entries per side")));
        }
        if lower.iter().zip(&upper).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("empty channel box".into()));
        }
        self.bounds = Some(ChannelBounds { lower, upper });
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.reference.channels()
    }

    pub fn inputs(&self) -> usize {
        self.reference.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.reference.outputs()
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        match &self.weight {
            CostWeight::Full(w) => w.clone(),
            CostWeight::PerChannel(w) => {
                let q = w.len();
                DMatrix::from_diagonal(&DVector::from_fn(q * self.horizon, |k, _| w[k % q]))
            }
        }
    }

    /// `W · M` without forming `W` for the Kronecker form.
    pub(crate) fn weigh(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.weight {
            CostWeight::Full(w) => w * m,
            CostWeight::PerChannel(w) => {
                let q = w.len();
                let mut out = m.clone();
                for (r, mut row) in out.row_iter_mut().enumerate() {
                    row *= w[r % q];
                }
                out
            }
        }
    }

    fn weigh_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.weigh(&m).column(0).into_owned()
    }

    /// `c(w − w_r)` for a stacked horizon trajectory.
    pub fn cost_stacked(&self, w: &DVector<f64>) -> f64 {
        let e = w - self.reference.stacked();
        e.dot(&self.weigh_vec(&e))
    }

    pub fn cost(&self, w: &Trajectory) -> Result<f64> {
        self.check_trajectory(w, self.horizon, "trajectory")?;
        Ok(self.cost_stacked(&w.stacked()))
    }

    pub(crate) fn check_trajectory(&self, w: &Trajectory, len: usize, what: &str) -> Result<()> {
        if w.len() != len || w.channels() != self.channels() || w.inputs() != self.inputs() {
            return Err(Error::dim(format!(
                "{what} is {}×{} with {} inputs, expected {len}×{} with {} inputs",
                w.len(),
                w.channels(),
                w.inputs(),
                self.channels(),
                self.inputs()
            )));
        }
        Ok(())
    }

    fn stacked_bounds(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        self.bounds.as_ref().map(|b| {
            let q = b.lower.len();
            let n = q * self.horizon;
            (
                DVector::from_fn(n, |k, _| b.lower[k % q]),
                DVector::from_fn(n, |k, _| b.upper[k % q]),
            )
        })
    }
}

/// A tracking problem over decision variables `z` whose horizon trajectory is
/// the affine image `w = E z + f`.
pub(crate) struct TrajectoryQp {
    pub e: DMatrix<f64>,
    pub f: DVector<f64>,
    pub equalities: Option<(DMatrix<f64>, DVector<f64>)>,
    /// Extra quadratic term `½ zᵀ R z` added to the tracking cost.
    pub regularizer: Option<DMatrix<f64>>,
}

pub(crate) struct TrajectoryQpSolution {
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    pub report: SolveReport,
}

impl TrajectoryQp {
    fn variables(&self) -> usize {
        self.e.ncols()
    }

    /// Assembles the QP in `z` (or `(z, w)` when the spec carries bounds).
    fn assemble(&self, spec: &ControlSpec) -> EqQp {
        let k = self.variables();
        let n_w = self.e.nrows();
        let (eq_a, eq_b) = self
            .equalities
            .clone()
            .unwrap_or_else(|| (DMatrix::zeros(0, k), DVector::zeros(0)));
        let reg = self.regularizer.clone().unwrap_or_else(|| DMatrix::zeros(k, k));
        let w_r = spec.reference.stacked();
        match spec.stacked_bounds() {
            None => {
                let we = spec.weigh(&self.e);
                let mut h = self.e.transpose() * &we * 2.0 + reg;
                crate::solver::symmetrize(&mut h);
                let lin = we.transpose() * (&self.f - &w_r) * 2.0;
                EqQp::new(h, lin).with_equalities(eq_a, eq_b)
            }
            Some((lo, hi)) => {
                // Lift to (z, w) so the box acts on plain coordinates.
                let nv = k + n_w;
                let mut h = DMatrix::zeros(nv, nv);
                h.view_mut((0, 0), (k, k)).copy_from(&reg);
                let w2 = spec.weight_matrix() * 2.0;
                h.view_mut((k, k), (n_w, n_w)).copy_from(&w2);
                crate::solver::symmetrize(&mut h);
                let mut lin = DVector::zeros(nv);
                lin.rows_mut(k, n_w).copy_from(&(-(&w2 * &w_r)));
                let m = eq_a.nrows();
                let mut a = DMatrix::zeros(m + n_w, nv);
                a.view_mut((0, 0), (m, k)).copy_from(&eq_a);
                a.view_mut((m, 0), (n_w, k)).copy_from(&self.e);
                a.view_mut((m, k), (n_w, n_w)).copy_from(&(-DMatrix::identity(n_w, n_w)));
                let mut b = DVector::zeros(m + n_w);
                b.rows_mut(0, m).copy_from(&eq_b);
                b.rows_mut(m, n_w).copy_from(&(-&self.f));
                let mut lower = DVector::from_element(nv, f64::NEG_INFINITY);
                let mut upper = DVector::from_element(nv, f64::INFINITY);
                lower.rows_mut(k, n_w).copy_from(&lo);
                upper.rows_mut(k, n_w).copy_from(&hi);
                EqQp::new(h, lin).with_equalities(a, b).with_bounds(lower, upper)
            }
        }
    }

    /// Minimizes the tracking cost plus the quadratic regularizer and an optional
    /// weighted ℓ1 term on the coordinates flagged in `l1`.
    pub fn solve(
        &self,
        spec: &ControlSpec,
        l1: Option<(f64, &[bool])>,
        opts: &SolverOptions,
    ) -> Result<TrajectoryQpSolution> {
        let k = self.variables();
        let qp = self.assemble(spec);
        let report = match l1 {
            Some((lambda, sel)) if lambda > 0.0 => {
                let mut full = sel.to_vec();
                full.resize(qp.dim(), false);
                solve_l1_qp(&qp, lambda, &full, opts)?
            }
            _ => solve_eq_qp(&qp, opts)?,
        };
        if !report.converged {
            return Err(Error::NotConverged {
                iterations: report.iterations,
                residual: report.optimality_residual,
            });
        }
        let z = report.solution.rows(0, k).into_owned();
        let w = &self.e * &z + &self.f;
        Ok(TrajectoryQpSolution { z, w, report })
    }
}

/// Inputs chosen by a model-based or predictor-based controller.
#[derive(Debug, Clone)]
pub struct PlannedInputs {
    /// `L × m`.
    pub inputs: DMatrix<f64>,
    /// The controller's own prediction of the horizon trajectory.
    pub predicted: Trajectory,
    /// `c(w_pred − w_r)`.
    pub cost: f64,
}

/// Reshapes a stacked `(u(0); …; u(L−1))` into `L × m`.
pub(crate) fn unstack(v: &DVector<f64>, width: usize) -> DMatrix<f64> {
    let rows = if width == 0 { 0 } else { v.len() / width };
    DMatrix::from_fn(rows, width, |t, c| v[t * width + c])
}

/// Affine map from stacked inputs to the interleaved trajectory, given the
/// stacked outputs as `y = G u + y₀`.
pub(crate) fn input_to_trajectory(
    g: &DMatrix<f64>,
    y0: &DVector<f64>,
    inputs: usize,
    outputs: usize,
    horizon: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let q = inputs + outputs;
    let mut e = DMatrix::zeros(q * horizon, inputs * horizon);
    let mut f = DVector::zeros(q * horizon);
    for t in 0..horizon {
        for c in 0..inputs {
            e[(t * q + c, t * inputs + c)] = 1.0;
        }
        for c in 0..outputs {
            e.row_mut(t * q + inputs + c).copy_from(&g.row(t * outputs + c));
            f[t * q + inputs + c] = y0[t * outputs + c];
        }
    }
    (e, f)
}

/// Optimal open-loop inputs for a known model started at state `x`.
pub fn optimal_from_state(model: &StateSpaceModel, x: &DVector<f64>, spec: &ControlSpec) -> Result<PlannedInputs> {
    optimal_from_state_with(model, x, spec, &SolverOptions::default())
}

pub fn optimal_from_state_with(
    model: &StateSpaceModel,
    x: &DVector<f64>,
    spec: &ControlSpec,
    opts: &SolverOptions,
) -> Result<PlannedInputs> {
    let (m, p, l) = (model.inputs(), model.outputs(), spec.horizon);
    if m != spec.inputs() || p != spec.outputs() {
        return Err(Error::dim("model and control spec disagree on channel counts"));
    }
    if x.len() != model.order() {
        return Err(Error::dim(format!("state has {} entries for order {}", x.len(), model.order())));
    }
    let y0 = model.observability(l) * x;
    let (e, f) = input_to_trajectory(&model.convolution(l), &y0, m, p, l);
    let tq = TrajectoryQp {
        e,
        f,
        equalities: None,
        regularizer: None,
    };
    let sol = tq.solve(spec, None, opts)?;
    let predicted = Trajectory::from_stacked(&sol.w, m + p, m)?;
    Ok(PlannedInputs {
        inputs: unstack(&sol.z, m),
        cost: spec.cost_stacked(&sol.w),
        predicted,
    })
}
