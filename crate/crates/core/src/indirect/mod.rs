//! Identify-then-control: least-squares multi-step predictors, a subspace
//! identification routine built on them, and certainty-equivalence control.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::deepc::{input_to_trajectory, optimal_from_state, unstack, ControlSpec, PlannedInputs, TrajectoryQp};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, pinv, ThinSvd, RANK_RTOL};
use crate::plants::StateSpaceModel;
use crate::signals::{HankelPartition, Trajectory};
use crate::solver::SolverOptions;

/// Multi-step predictor `y = K_p (u_ini; y_ini) + K_f u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpcPredictor {
    k: DMatrix<f64>,
    tini: usize,
    horizon: usize,
    inputs: usize,
    outputs: usize,
    truncated_to: Option<usize>,
    causal: bool,
}

impl SpcPredictor {
    /// Wraps an explicit `K` with columns `(past u, past y, future u)`.
    pub fn from_matrix(k: DMatrix<f64>, tini: usize, horizon: usize, inputs: usize, outputs: usize) -> Result<Self> {
        let cols = (inputs + outputs) * tini + inputs * horizon;
        if k.shape() != (outputs * horizon, cols) {
            return Err(Error::dim(format!(
                "K is {:?}, expected {}×{cols}",
                k.shape(),
                outputs * horizon
            )));
        }
        Ok(SpcPredictor {
            k,
            tini,
            horizon,
            inputs,
            outputs,
            truncated_to: None,
            causal: false,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    fn past_cols(&self) -> usize {
        (self.inputs + self.outputs) * self.tini
    }

    pub fn k_p(&self) -> DMatrix<f64> {
        self.k.columns(0, self.past_cols()).into_owned()
    }

    pub fn k_f(&self) -> DMatrix<f64> {
        self.k.columns(self.past_cols(), self.inputs * self.horizon).into_owned()
    }

    pub fn tini(&self) -> usize {
        self.tini
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Order the past block was truncated to, if any.
    pub fn truncated_to(&self) -> Option<usize> {
        self.truncated_to
    }

    pub fn is_causal(&self) -> bool {
        self.causal
    }

    /// `(u_ini; y_ini)` in the column order of `K_p`.
    pub fn past_vector(&self, w_ini: &Trajectory) -> Result<DVector<f64>> {
        if w_ini.len() != self.tini || w_ini.inputs() != self.inputs || w_ini.outputs() != self.outputs {
            return Err(Error::dim(format!(
                "prefix is {}×{} with {} inputs, predictor expects Tini={} with {} inputs and {} outputs",
                w_ini.len(),
                w_ini.channels(),
                w_ini.inputs(),
                self.tini,
                self.inputs,
                self.outputs
            )));
        }
        let u = w_ini.stacked_inputs();
        let y = w_ini.stacked_outputs();
        Ok(DVector::from_iterator(u.len() + y.len(), u.iter().chain(y.iter()).copied()))
    }

    /// Stacked future outputs for the prefix and stacked future inputs `u`.
    pub fn predict(&self, w_ini: &Trajectory, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.inputs * self.horizon {
            return Err(Error::dim(format!("{} future inputs, expected {}", u.len(), self.inputs * self.horizon)));
        }
        Ok(self.k_p() * self.past_vector(w_ini)? + self.k_f() * u)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for row in self.k.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// `K = Yf (Up; Yp; Uf)†`, the minimum-Frobenius-norm least-squares predictor.
pub fn fit_spc_predictor(part: &HankelPartition) -> SpcPredictor {
    let k = &part.yf * pinv(&part.regressor());
    SpcPredictor {
        k,
        tini: part.tini(),
        horizon: part.horizon(),
        inputs: part.inputs(),
        outputs: part.outputs(),
        truncated_to: None,
        causal: false,
    }
}

/// Replaces `K_p` by its best rank-`n` approximation.
pub fn truncate_rank(pred: &SpcPredictor, n: usize) -> SpcPredictor {
    let kp = pred.k_p();
    let svd = ThinSvd::new(&kp);
    let r = n.min(svd.singular_values.len());
    let approx = svd.u.columns(0, r)
        * DMatrix::from_diagonal(&svd.singular_values.rows(0, r).into_owned())
        * svd.v_t.rows(0, r);
    let mut out = pred.clone();
    out.k.columns_mut(0, pred.past_cols()).copy_from(&approx);
    out.truncated_to = Some(n);
    out
}

/// Zeros the blocks of `K_f` above the block diagonal, so that `y(t)` only sees `u(0..=t)`.
pub fn enforce_causality(pred: &SpcPredictor) -> SpcPredictor {
    let (m, p) = (pred.inputs, pred.outputs);
    let off = pred.past_cols();
    let mut out = pred.clone();
    for i in 0..pred.horizon {
        for j in (i + 1)..pred.horizon {
            out.k.view_mut((i * p, off + j * m), (p, m)).fill(0.0);
        }
    }
    out.causal = true;
    out
}

/// Tracking control with the predictor substituted for the plant.
pub fn solve_spc_control(pred: &SpcPredictor, w_ini: &Trajectory, spec: &ControlSpec) -> Result<PlannedInputs> {
    solve_spc_control_with(pred, w_ini, spec, &SolverOptions::default())
}

pub fn solve_spc_control_with(
    pred: &SpcPredictor,
    w_ini: &Trajectory,
    spec: &ControlSpec,
    opts: &SolverOptions,
) -> Result<PlannedInputs> {
    if pred.tini != spec.tini || pred.horizon != spec.horizon {
        return Err(Error::dim("predictor horizons do not match the control spec"));
    }
    if pred.inputs != spec.inputs() || pred.outputs != spec.outputs() {
        return Err(Error::dim("predictor and control spec disagree on channel counts"));
    }
    let y0 = pred.k_p() * pred.past_vector(w_ini)?;
    let (m, p, l) = (pred.inputs, pred.outputs, pred.horizon);
    let (e, f) = input_to_trajectory(&pred.k_f(), &y0, m, p, l);
    let tq = TrajectoryQp {
        e,
        f,
        equalities: None,
        regularizer: None,
    };
    let sol = tq.solve(spec, None, opts)?;
    Ok(PlannedInputs {
        inputs: unstack(&sol.z, m),
        cost: spec.cost_stacked(&sol.w),
        predicted: Trajectory::from_stacked(&sol.w, m + p, m)?,
    })
}

/// Order-`n` state-space model from input/output data.
///
/// The column space of the past block `K_p` of the least-squares predictor is
/// that of the extended observability matrix, so its leading `n` singular
/// directions give `O`; `C` and `A` follow from its first block row and shift
/// structure. `B`, `D` and the initial state are then fitted jointly by linear
/// least squares on the whole record.
pub fn subspace_id(w_d: &Trajectory, n: usize, tini: usize, horizon: usize) -> Result<StateSpaceModel> {
    let p = w_d.outputs();
    if n == 0 {
        return Err(Error::Identification("model order must be positive".into()));
    }
    if p * horizon < n + p {
        return Err(Error::Identification(format!(
            "horizon {horizon} is too short to resolve order {n} from {p} outputs"
        )));
    }
    let part = HankelPartition::new(w_d, tini, horizon)?;
    let pred = fit_spc_predictor(&part);
    let svd = ThinSvd::new(&pred.k_p());
    if svd.singular_values.len() < n || svd.singular_values[n - 1] <= 0.0 {
        return Err(Error::Identification(format!(
            "predictor past block has fewer than {n} nonzero singular values"
        )));
    }
    let sqrt_s = svd.singular_values.rows(0, n).map(f64::sqrt);
    let obs = svd.u.columns(0, n) * DMatrix::from_diagonal(&sqrt_s);
    let c = obs.rows(0, p).into_owned();
    let upper = obs.rows(0, p * (horizon - 1)).into_owned();
    let lower = obs.rows(p, p * (horizon - 1)).into_owned();
    let a = least_squares(&upper, &lower)?;

    let (b, d) = fit_input_matrices(&a, &c, w_d)?;
    StateSpaceModel::new(a, b, c, d)
}

/// Joint least-squares fit of `(x0, B, D)` with `A`, `C` fixed; minimum-norm when rank deficient.
fn fit_input_matrices(a: &DMatrix<f64>, c: &DMatrix<f64>, w: &Trajectory) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p, m, t) = (a.nrows(), c.nrows(), w.inputs(), w.len());
    let u = w.input_matrix();
    let y = w.stacked_outputs();
    let cols = n + n * m + p * m;
    let mut phi = DMatrix::zeros(t * p, cols);

    // Free response from each unit initial state.
    for i in 0..n {
        let mut x = DVector::zeros(n);
        x[i] = 1.0;
        for k in 0..t {
            phi.view_mut((k * p, i), (p, 1)).copy_from(&(c * &x));
            x = a * x;
        }
    }
    // Forced response to each entry of B.
    for i in 0..n {
        for j in 0..m {
            let col = n + i * m + j;
            let mut x = DVector::zeros(n);
            for k in 0..t {
                phi.view_mut((k * p, col), (p, 1)).copy_from(&(c * &x));
                x = a * x;
                x[i] += u[(k, j)];
            }
        }
    }
    // Direct feedthrough.
    for i in 0..p {
        for j in 0..m {
            let col = n + n * m + i * m + j;
            for k in 0..t {
                phi[(k * p + i, col)] = u[(k, j)];
            }
        }
    }
    let theta = least_squares(&phi, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()))?;
    let b = DMatrix::from_fn(n, m, |i, j| theta[(n + i * m + j, 0)]);
    let d = DMatrix::from_fn(p, m, |i, j| theta[(n + n * m + i * m + j, 0)]);
    Ok((b, d))
}

/// Least-squares state at the first prefix sample from `y_ini = O x + G u_ini`.
pub fn estimate_initial_state(model: &StateSpaceModel, w_ini: &Trajectory) -> Result<DVector<f64>> {
    let tini = w_ini.len();
    if w_ini.inputs() != model.inputs() || w_ini.outputs() != model.outputs() {
        return Err(Error::dim("prefix and model disagree on channel counts"));
    }
    let n = model.order();
    if tini < model.lag() {
        return Err(Error::Unobservable {
            depth: tini,
            rank: 0,
            order: n,
        });
    }
    let obs = model.observability(tini);
    let svd = ThinSvd::new(&obs);
    let rank = svd.rank(RANK_RTOL);
    if rank < n {
        return Err(Error::Unobservable { depth: tini, rank, order: n });
    }
    let resid = w_ini.stacked_outputs() - model.convolution(tini) * w_ini.stacked_inputs();
    Ok(svd.pinv(RANK_RTOL) * resid)
}

/// Minimum-norm least-squares state at the first prefix sample. Agrees with
/// [`estimate_initial_state`] when the prefix determines the state, and still
/// answers when it does not (e.g. a model of higher order than the prefix length).
pub fn estimate_initial_state_min_norm(model: &StateSpaceModel, w_ini: &Trajectory) -> Result<DVector<f64>> {
    if w_ini.inputs() != model.inputs() || w_ini.outputs() != model.outputs() {
        return Err(Error::dim("prefix and model disagree on channel counts"));
    }
    let tini = w_ini.len();
    let resid = w_ini.stacked_outputs() - model.convolution(tini) * w_ini.stacked_inputs();
    Ok(ThinSvd::new(&model.observability(tini)).pinv(RANK_RTOL) * resid)
}

/// Solves the tracking problem as if `model` were the plant.
pub fn certainty_equivalence_control(model: &StateSpaceModel, w_ini: &Trajectory, spec: &ControlSpec) -> Result<PlannedInputs> {
    let x = crate::deepc::state_after_prefix(model, w_ini)?;
    optimal_from_state(model, &x, spec)
}

/// As [`certainty_equivalence_control`], with the minimum-norm state estimate.
pub fn certainty_equivalence_control_min_norm(
    model: &StateSpaceModel,
    w_ini: &Trajectory,
    spec: &ControlSpec,
) -> Result<PlannedInputs> {
    let x0 = estimate_initial_state_min_norm(model, w_ini)?;
    let (_, x) = model.simulate_with_state(&x0, &w_ini.input_matrix())?;
    optimal_from_state(model, &x, spec)
}
