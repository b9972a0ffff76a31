//! Self-contained property checks behind `ddctrl check`: each one samples a
//! few random instances and verifies a structural identity at a fixed tolerance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::deepc::{realized_cost, solve_deepc, ControlSpec, CostWeight, Regularizer};
use crate::experiment::add_measurement_noise;
use crate::indirect::{fit_spc_predictor, solve_spc_control};
use crate::linalg::{least_squares, numerical_rank, RowSpace};
use crate::plants::{gaussian_input, make_benchmark_plant, random_stable_plant, StateSpaceModel};
use crate::signals::{build_hankel, HankelPartition, Trajectory};
use crate::solver::{solve_eq_qp, solve_l1_qp, subgradient_violation, EqQp, SolverOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Random instances per solver and projector check.
const INSTANCES: usize = 50;

fn outcome(name: &'static str, worst: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.2e} (tol {tol:.0e})"),
    }
}

fn failed(name: &'static str, e: impl std::fmt::Display) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: false,
        detail: e.to_string(),
    }
}

fn gaussian(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn run(model: &StateSpaceModel, len: usize, rng: &mut ChaCha8Rng) -> crate::Result<(Trajectory, DVector<f64>)> {
    let x0 = DVector::from_fn(model.order(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = gaussian_input(len, model.inputs(), 1.0, rng);
    model.simulate_with_state(&x0, &u)
}

/// Hankel rank equals `m·depth + n`, and fresh trajectories lie in its column span.
/// Twenty random plants (orders 2–5, one or two inputs), data length `4·depth`.
pub fn fundamental_lemma() -> CheckOutcome {
    const NAME: &str = "fundamental_lemma";
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let (n, m) = (2 + k % 4, 1 + (k / 4) % 2);
        let model = random_stable_plant(n, m, m, &mut rng);
        let depth = 4 + n;
        let Ok((w, _)) = run(&model, 4 * depth, &mut rng) else {
            return failed(NAME, "simulation failed");
        };
        let h = match build_hankel(&w, depth) {
            Ok(h) => h,
            Err(e) => return failed(NAME, e),
        };
        let rank = numerical_rank(&h, 1e-8);
        if rank != m * depth + n {
            return failed(NAME, format!("rank {rank} ≠ {}", m * depth + n));
        }
        for _ in 0..10 {
            let Ok((fresh, _)) = run(&model, depth, &mut rng) else {
                return failed(NAME, "simulation failed");
            };
            let v = fresh.stacked();
            let target = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
            let Ok(g) = least_squares(&h, &target) else {
                return failed(NAME, "least squares failed");
            };
            worst = worst.max((&h * g - &target).norm() / v.norm());
        }
    }
    outcome(NAME, worst, 1e-8)
}

/// Equality-constrained QP solutions satisfy the KKT conditions.
pub fn eq_qp_kkt() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let n = rng.gen_range(4..15);
        let k = rng.gen_range(0..n);
        let g = gaussian(n, n, &mut rng);
        let p = EqQp::new(g.transpose() * &g + DMatrix::identity(n, n), gaussian(n, 1, &mut rng).column(0).into())
            .with_equalities(gaussian(k, n, &mut rng), gaussian(k, 1, &mut rng).column(0).into());
        match solve_eq_qp(&p, &SolverOptions::default()) {
            Ok(r) => {
                let stat = subgradient_violation(&p, &DVector::zeros(n), &r.solution, &r.multipliers, 0.0);
                worst = worst.max(stat).max(r.constraint_residual);
            }
            Err(e) => return failed("eq_qp_kkt", e),
        }
    }
    outcome("eq_qp_kkt", worst, 1e-8)
}

/// ℓ1-regularized QP solutions satisfy the coordinatewise subgradient condition.
pub fn l1_subgradient() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let n = rng.gen_range(4..12);
        let k = rng.gen_range(0..n / 2);
        let g = gaussian(n + 2, n, &mut rng);
        let lambda = rng.gen_range(0.05..2.0);
        let p = EqQp::new(g.transpose() * &g, gaussian(n, 1, &mut rng).column(0).into())
            .with_equalities(gaussian(k, n, &mut rng), gaussian(k, 1, &mut rng).column(0).into());
        let selector = vec![true; n];
        match solve_l1_qp(&p, lambda, &selector, &SolverOptions::default()) {
            Ok(r) => {
                let weights = DVector::from_element(n, lambda);
                let v = subgradient_violation(&p, &weights, &r.solution, &r.multipliers, 1e-9);
                worst = worst.max(v);
            }
            Err(e) => return failed("l1_subgradient", e),
        }
    }
    outcome("l1_subgradient", worst, 1e-6)
}

/// Row-space projectors are idempotent, symmetric and leave the rows fixed.
pub fn projector() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (r, c) = (rng.gen_range(1..10), rng.gen_range(1..14));
        let rank = rng.gen_range(1..=r.min(c));
        let m = gaussian(r, rank, &mut rng) * gaussian(rank, c, &mut rng);
        let pi = RowSpace::new(&m).projector();
        let idem = (&pi * &pi - &pi).amax();
        let sym = (&pi - pi.transpose()).amax();
        let fix = (&m * &pi - &m).amax() / m.amax().max(1.0);
        worst = worst.max(idem).max(sym).max(fix);
    }
    outcome("projector", worst, 1e-10)
}

fn benchmark_spec(tini: usize, horizon: usize) -> crate::Result<ControlSpec> {
    let y = DMatrix::from_fn(horizon, 1, |t, _| {
        (2.0 * std::f64::consts::PI * t as f64 / (horizon as f64 - 1.0)).sin()
    });
    let reference = Trajectory::from_io(&DMatrix::zeros(horizon, 1), &y)?;
    ControlSpec::new(tini, horizon, reference, CostWeight::PerChannel(vec![0.01, 2000.0]))
}

/// With noise-free data and a feasible reference, the direct method tracks exactly.
pub fn noise_free_consistency() -> CheckOutcome {
    const NAME: &str = "noise_free_consistency";
    let attempt = || -> crate::Result<f64> {
        let model = make_benchmark_plant();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (data, _) = run(&model, 250, &mut rng)?;
        let (tini, horizon) = (5, 20);
        let (future, _) = run(&model, tini + horizon, &mut rng)?;
        let base = benchmark_spec(tini, horizon)?;
        let spec = ControlSpec::new(tini, horizon, future.window(tini, horizon)?, base.weight.clone())?;
        let w_ini = future.window(0, tini)?;
        let part = HankelPartition::new(&data, tini, horizon)?;
        let sol = solve_deepc(&part, &w_ini, &spec, Regularizer::ProjTwoNormSq { lambda: 1.0 })?;
        let x = crate::deepc::state_after_prefix(&model, &w_ini)?;
        Ok(realized_cost(&model, &x, &sol.inputs(), &spec)?.1)
    };
    match attempt() {
        Ok(c) => outcome(NAME, c, 1e-6),
        Err(e) => failed(NAME, e),
    }
}

/// Heavily projection-regularized direct control coincides with the least-squares predictor.
pub fn spc_equivalence() -> CheckOutcome {
    const NAME: &str = "spc_equivalence";
    let attempt = || -> crate::Result<f64> {
        let model = make_benchmark_plant();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (tini, horizon) = (5, 20);
        let (clean, _) = run(&model, 250 + tini, &mut rng)?;
        let data = add_measurement_noise(&clean.window(0, 250)?, 0.05, 17)?;
        let w_ini = clean.window(250, tini)?;
        let spec = benchmark_spec(tini, horizon)?;
        let part = HankelPartition::new(&data, tini, horizon)?;
        let direct = solve_deepc(&part, &w_ini, &spec, Regularizer::ProjTwoNormSq { lambda: 1e12 })?.inputs();
        let spc = solve_spc_control(&fit_spc_predictor(&part), &w_ini, &spec)?.inputs;
        Ok((direct - &spc).norm() / spc.norm())
    };
    match attempt() {
        Ok(v) => outcome(NAME, v, 1e-5),
        Err(e) => failed(NAME, e),
    }
}

/// Runs every check in a fixed order.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        fundamental_lemma(),
        eq_qp_kkt(),
        l1_subgradient(),
        projector(),
        noise_free_consistency(),
        spc_equivalence(),
    ]
}
