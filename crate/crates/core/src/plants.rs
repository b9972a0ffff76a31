//! Ground-truth simulators: discrete-time LTI state-space models, the shipped
//! 5th-order SISO benchmark, and the ε-interpolated Lotka-Volterra system.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, serde_rows, RANK_RTOL};
use crate::signals::Trajectory;

/// `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t) + D u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    lag: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    n: usize,
    m: usize,
    p: usize,
    lag: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

impl From<StateSpaceModel> for ModelRepr {
    fn from(s: StateSpaceModel) -> Self {
        ModelRepr {
            n: s.order(),
            m: s.inputs(),
            p: s.outputs(),
            lag: s.lag,
            a: serde_rows::to_rows(&s.a),
            b: serde_rows::to_rows(&s.b),
            c: serde_rows::to_rows(&s.c),
            d: serde_rows::to_rows(&s.d),
        }
    }
}

impl TryFrom<ModelRepr> for StateSpaceModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let load = |rows: &[Vec<f64>], nr: usize, nc: usize, name: &str| -> Result<DMatrix<f64>> {
            if nr == 0 {
                return Ok(DMatrix::zeros(0, nc));
            }
            let m = serde_rows::from_rows(rows, nc).map_err(Error::Parse)?;
            if m.shape() != (nr, nc) {
                return Err(Error::Parse(format!("matrix {name} is not {nr}x{nc}")));
            }
            Ok(m)
        };
        let a = load(&r.a, r.n, r.n, "A")?;
        let b = load(&r.b, r.n, r.m, "B")?;
        let c = load(&r.c, r.p, r.n, "C")?;
        let d = load(&r.d, r.p, r.m, "D")?;
        StateSpaceModel::new(a, b, c, d)?.with_lag(r.lag)
    }
}

impl StateSpaceModel {
    /// The lag defaults to the observability index (or `n` when unobservable).
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::dim(format!(
                "A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        let mut model = StateSpaceModel { a, b, c, d, lag: n };
        model.lag = model.observability_index().unwrap_or(n);
        Ok(model)
    }

    pub fn with_lag(mut self, lag: usize) -> Result<Self> {
        if lag > self.order().max(1) {
            return Err(Error::InvalidArgument(format!(
                "lag {lag} exceeds order {}",
                self.order()
            )));
        }
        self.lag = lag;
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
    pub fn lag(&self) -> usize {
        self.lag
    }

    /// `O_depth = (C; CA; …; CA^{depth−1})`.
    pub fn observability(&self, depth: usize) -> DMatrix<f64> {
        let (n, p) = (self.order(), self.outputs());
        let mut o = DMatrix::zeros(p * depth, n);
        let mut block = self.c.clone();
        for k in 0..depth {
            o.rows_mut(k * p, p).copy_from(&block);
            block = &block * &self.a;
        }
        o
    }

    /// `(B, AB, …, A^{depth−1}B)`.
    pub fn controllability(&self, depth: usize) -> DMatrix<f64> {
        let (n, m) = (self.order(), self.inputs());
        let mut k = DMatrix::zeros(n, m * depth);
        let mut block = self.b.clone();
        for j in 0..depth {
            k.columns_mut(j * m, m).copy_from(&block);
            block = &self.a * &block;
        }
        k
    }

    /// First `count` Markov parameters `D, CB, CAB, …`.
    pub fn markov_parameters(&self, count: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.d.clone());
        let mut ab = self.b.clone();
        for _ in 1..count {
            out.push(&self.c * &ab);
            ab = &self.a * &ab;
        }
        out
    }

    /// Lower block-triangular Toeplitz matrix `G_depth` of Markov parameters,
    /// so that `y = O x₀ + G u` over `depth` samples.
    pub fn convolution(&self, depth: usize) -> DMatrix<f64> {
        let (m, p) = (self.inputs(), self.outputs());
        let markov = self.markov_parameters(depth);
        let mut g = DMatrix::zeros(p * depth, m * depth);
        for i in 0..depth {
            for j in 0..=i {
                g.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
            }
        }
        g
    }

    /// Smallest `k` with `rank O_k = n`, if any `k <= n` achieves it.
    pub fn observability_index(&self) -> Option<usize> {
        let n = self.order();
        if n == 0 {
            return Some(0);
        }
        (1..=n).find(|&k| numerical_rank(&self.observability(k), RANK_RTOL) == n)
    }

    pub fn is_observable(&self) -> bool {
        self.observability_index().is_some()
    }

    pub fn is_controllable(&self) -> bool {
        let n = self.order();
        numerical_rank(&self.controllability(n), RANK_RTOL) == n
    }

    pub fn spectral_radius(&self) -> f64 {
        if self.order() == 0 {
            return 0.0;
        }
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Same input/output behavior in coordinates `x̃ = T x`.
    pub fn similarity_transform(&self, t: &DMatrix<f64>) -> Result<Self> {
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("singular similarity transform".into()))?;
        Ok(StateSpaceModel {
            a: t * &self.a * &t_inv,
            b: t * &self.b,
            c: &self.c * &t_inv,
            d: self.d.clone(),
            lag: self.lag,
        })
    }

    /// Simulates from `x0` under `u` (`T × m`), returning the trajectory and `x(T)`.
    pub fn simulate_with_state(&self, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<(Trajectory, DVector<f64>)> {
        if x0.len() != self.order() || u.ncols() != self.inputs() {
            return Err(Error::dim(format!(
                "x0 has {} entries for order {}, u has {} columns for {} inputs",
                x0.len(),
                self.order(),
                u.ncols(),
                self.inputs()
            )));
        }
        let t = u.nrows();
        let mut y = DMatrix::zeros(t, self.outputs());
        let mut x = x0.clone();
        for k in 0..t {
            let uk = u.row(k).transpose();
            let yk = &self.c * &x + &self.d * &uk;
            y.row_mut(k).copy_from(&yk.transpose());
            x = &self.a * &x + &self.b * &uk;
        }
        Ok((Trajectory::from_io(u, &y)?, x))
    }
}

/// `y(t) = C x(t) + D u(t)`, `x(t+1) = A x(t) + B u(t)` with inputs-first channels.
pub fn simulate_lti(model: &StateSpaceModel, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<Trajectory> {
    model.simulate_with_state(x0, u).map(|(w, _)| w)
}

/// Fixed, stable, minimal 5th-order SISO plant with unit DC gain.
///
/// Real modal form with poles `0.95·e^{±0.35i}` (lightly damped),
/// `0.75·e^{±1.1i}` and `0.55`:
///
/// ```text
/// A = [ 0.8924040772 -0.3257529171  0             0            0    ]
///     [ 0.3257529171  0.8924040772  0             0            0    ]
///     [ 0             0             0.3401970911 -0.66840552   0    ]
///     [ 0             0             0.66840552    0.3401970911 0    ]
///     [ 0             0             0             0            0.55 ]
/// B = [1 0 1 0 1]ᵀ
/// C = [0.33720453949731 0.16860226974866 -0.20232272369839 0.10116136184919 0.13488181579892]
/// D = 0
/// ```
pub fn make_benchmark_plant() -> StateSpaceModel {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(5, 5, &[
        0.8924040772, -0.3257529171, 0.0, 0.0, 0.0,
        0.3257529171, 0.8924040772, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.3401970911, -0.66840552, 0.0,
        0.0, 0.0, 0.66840552, 0.3401970911, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.55,
    ]);
    let b = DMatrix::from_column_slice(5, 1, &[1.0, 0.0, 1.0, 0.0, 1.0]);
    let c = DMatrix::from_row_slice(
        1,
        5,
        &[
            0.3372045394973107,
            0.16860226974865536,
            -0.20232272369838644,
            0.10116136184919322,
            0.1348818157989243,
        ],
    );
    let d = DMatrix::zeros(1, 1);
    StateSpaceModel::new(a, b, c, d)
        .and_then(|m| m.with_lag(5))
        .expect("benchmark matrices are consistent")
}

/// Parameters of the interpolated Lotka-Volterra map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotkaVolterraParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub dt: f64,
    /// 1 = affine linearization, 0 = fully nonlinear.
    pub epsilon: f64,
}

impl Default for LotkaVolterraParams {
    fn default() -> Self {
        LotkaVolterraParams {
            a: 0.5,
            b: 0.025,
            c: 0.5,
            d: 0.005,
            dt: 0.01,
            epsilon: 0.0,
        }
    }
}

impl LotkaVolterraParams {
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        LotkaVolterraParams { epsilon, ..self }
    }

    /// `(c/d, a/b)`, the equilibrium for `u = 0`.
    pub fn equilibrium(&self) -> [f64; 2] {
        [self.c / self.d, self.a / self.b]
    }

    pub fn nonlinear_step(&self, x: [f64; 2], u: f64) -> [f64; 2] {
        let [x1, x2] = x;
        [
            x1 + self.dt * (self.a * x1 - self.b * x1 * x2),
            x2 + self.dt * (self.d * x1 * x2 - self.c * x2 + u),
        ]
    }

    pub fn linear_step(&self, x: [f64; 2], u: f64) -> [f64; 2] {
        let [e1, e2] = self.equilibrium();
        let (d1, d2) = (x[0] - e1, x[1] - e2);
        [
            x[0] + self.dt * ((self.a - self.b * e2) * d1 - self.b * e1 * d2),
            x[1] + self.dt * (self.d * e2 * d1 + (self.d * e1 - self.c) * d2 + u),
        ]
    }

    /// Linearization in deviation coordinates `x − x̄`, full state measured.
    pub fn linearized_model(&self) -> StateSpaceModel {
        let [e1, e2] = self.equilibrium();
        let dt = self.dt;
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(2, 2, &[
            1.0 + dt * (self.a - self.b * e2), -dt * self.b * e1,
            dt * self.d * e2, 1.0 + dt * (self.d * e1 - self.c),
        ]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, dt]);
        StateSpaceModel::new(a, b, DMatrix::identity(2, 2), DMatrix::zeros(2, 1))
            .expect("2x2 linearization is consistent")
    }

    /// The affine linearization in raw coordinates as an order-3 LTI system whose
    /// third state is the constant 1; initial state `(x₁, x₂, 1)`.
    pub fn affine_model(&self) -> StateSpaceModel {
        let lin = self.linearized_model();
        let xbar = DVector::from_row_slice(&self.equilibrium());
        let offset = &xbar - lin.a() * &xbar;
        let mut a = DMatrix::zeros(3, 3);
        a.view_mut((0, 0), (2, 2)).copy_from(lin.a());
        a.view_mut((0, 2), (2, 1)).copy_from(&offset);
        a[(2, 2)] = 1.0;
        let b = DMatrix::from_column_slice(3, 1, &[0.0, self.dt, 0.0]);
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        StateSpaceModel::new(a, b, c, DMatrix::zeros(2, 1)).expect("affine lift is consistent")
    }

    /// Simulates the interpolated map under `u`, recording `(u, x₁, x₂)` per sample,
    /// and returns the state after the last input.
    pub fn simulate_with_state(&self, x0: [f64; 2], u: &[f64]) -> Result<(Trajectory, [f64; 2])> {
        let mut data = DMatrix::zeros(u.len(), 3);
        let mut x = x0;
        for (k, &uk) in u.iter().enumerate() {
            data[(k, 0)] = uk;
            data[(k, 1)] = x[0];
            data[(k, 2)] = x[1];
            x = lotka_volterra_step(x, uk, self);
        }
        Ok((Trajectory::new(data, 1)?, x))
    }
}

/// `ε · f_linear(x, u) + (1 − ε) · f_nonlinear(x, u)`.
pub fn lotka_volterra_step(state: [f64; 2], u: f64, p: &LotkaVolterraParams) -> [f64; 2] {
    let eps = p.epsilon;
    if eps == 0.0 {
        return p.nonlinear_step(state, u);
    }
    if eps == 1.0 {
        return p.linear_step(state, u);
    }
    let lin = p.linear_step(state, u);
    let nl = p.nonlinear_step(state, u);
    [
        eps * lin[0] + (1.0 - eps) * nl[0],
        eps * lin[1] + (1.0 - eps) * nl[1],
    ]
}

/// `u(t_k) = 2(sin t_k + sin 0.1 t_k)² + v(t_k)` for `k = start .. start + len`.
pub fn lv_input(p: &LotkaVolterraParams, start: usize, len: usize, noise_sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    (start..start + len)
        .map(|k| {
            let t = k as f64 * p.dt;
            let base = 2.0 * (t.sin() + (0.1 * t).sin()).powi(2);
            if noise_sigma > 0.0 {
                base + noise.sample(rng)
            } else {
                base
            }
        })
        .collect()
}

/// `T` samples of `(u, x₁, x₂)` under the noisy sinusoidal input; deterministic in `seed`.
pub fn collect_lv_data(p: &LotkaVolterraParams, x0: [f64; 2], samples: usize, input_noise_sigma: f64, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = lv_input(p, 0, samples, input_noise_sigma, &mut rng);
    p.simulate_with_state(x0, &u).map(|(w, _)| w)
}

/// Anything the realized control performance can be evaluated on.
pub trait Plant {
    fn inputs(&self) -> usize;
    fn outputs(&self) -> usize;
    /// Simulates from `x0` under `u` (`T × m`).
    fn simulate(&self, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<Trajectory>;
}

impl Plant for StateSpaceModel {
    fn inputs(&self) -> usize {
        StateSpaceModel::inputs(self)
    }
    fn outputs(&self) -> usize {
        StateSpaceModel::outputs(self)
    }
    fn simulate(&self, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<Trajectory> {
        simulate_lti(self, x0, u)
    }
}

impl Plant for LotkaVolterraParams {
    fn inputs(&self) -> usize {
        1
    }
    fn outputs(&self) -> usize {
        2
    }
    fn simulate(&self, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<Trajectory> {
        if x0.len() != 2 || u.ncols() != 1 {
            return Err(Error::dim("Lotka-Volterra takes a 2-state and a scalar input"));
        }
        let inputs: Vec<f64> = u.column(0).iter().copied().collect();
        self.simulate_with_state([x0[0], x0[1]], &inputs).map(|(w, _)| w)
    }
}

/// Random stable, minimal plant with spectral radius uniform in `[0.5, 0.9]`
/// and Gaussian `B`, `C`, `D`.
pub fn random_stable_plant(n: usize, m: usize, p: usize, rng: &mut ChaCha8Rng) -> StateSpaceModel {
    fn gaussian(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }
    loop {
        let (a, b) = (gaussian(n, n, rng), gaussian(n, m, rng));
        let (c, d) = (gaussian(p, n, rng), gaussian(p, m, rng));
        let model = StateSpaceModel::new(a, b, c, d).expect("shapes are consistent");
        let rho = model.spectral_radius();
        if rho < 1e-3 {
            continue;
        }
        let target = rng.gen_range(0.5..0.9);
        let scaled = StateSpaceModel::new(
            model.a() * (target / rho),
            model.b().clone(),
            model.c().clone(),
            model.d().clone(),
        )
        .expect("shapes are consistent");
        if scaled.is_observable() && scaled.is_controllable() {
            return scaled;
        }
    }
}

/// Gaussian input sequence (`T × m`), i.i.d. with standard deviation `std`.
pub fn gaussian_input(samples: usize, inputs: usize, std: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    DMatrix::from_fn(samples, inputs, |_, _| dist.sample(rng))
}
