use super::*;
use approx::assert_relative_eq;
use nalgebra::{dmatrix, dvector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_psd(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let f = gaussian(rank, n, rng);
    let mut q = f.transpose() * f;
    eqp::symmetrize(&mut q);
    q
}

fn random_feasible(n: usize, k: usize, rng: &mut ChaCha8Rng) -> EqQp {
    let q = random_psd(n, n, rng) + DMatrix::identity(n, n) * 0.1;
    let a = gaussian(k, n, rng);
    let b = &a * DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    EqQp::new(q, DVector::from_fn(n, |_, _| StandardNormal.sample(rng))).with_equalities(a, b)
}

#[test]
fn pinned_equality_example() {
    // min (x-1)^2 s.t. x = 0
    let p = EqQp::new(dmatrix![2.0], dvector![-2.0]).with_equalities(dmatrix![1.0], dvector![0.0]);
    let r = solve_eq_qp(&p, &SolverOptions::default()).unwrap();
    assert_relative_eq!(r.solution[0], 0.0, epsilon = 1e-14);
    // objective excludes the constant: (x-1)^2 = x^2 - 2x + 1
    assert_relative_eq!(r.objective + 1.0, 1.0, epsilon = 1e-14);
    assert!(r.converged);
}

#[test]
fn symmetric_min_norm_example() {
    let p = EqQp::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
        .with_equalities(dmatrix![1.0, 1.0], dvector![2.0]);
    let r = solve_eq_qp(&p, &SolverOptions::default()).unwrap();
    assert_relative_eq!(r.solution, dvector![1.0, 1.0], epsilon = 1e-12);
}

#[test]
fn random_instances_satisfy_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..30 {
        let n = rng.gen_range(2..12);
        let k = rng.gen_range(0..n);
        let p = random_feasible(n, k, &mut rng);
        let r = solve_eq_qp(&p, &SolverOptions::default()).unwrap();
        let kkt = &p.hessian * &r.solution + &p.linear + p.eq_matrix.transpose() * &r.multipliers;
        assert!(kkt.norm() <= 1e-8, "kkt residual {}", kkt.norm());
        assert!((&p.eq_matrix * &r.solution - &p.eq_rhs).norm() <= 1e-10);
    }
}

#[test]
fn infeasible_and_unbounded_are_reported() {
    let p = EqQp::new(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_equalities(dmatrix![1.0, 1.0; 1.0, 1.0], dvector![1.0, 2.0]);
    assert!(matches!(
        solve_eq_qp(&p, &SolverOptions::default()),
        Err(Error::Infeasible { .. })
    ));
    // flat along x2 with nonzero slope
    let p = EqQp::new(dmatrix![1.0, 0.0; 0.0, 0.0], dvector![0.0, 1.0]);
    assert!(matches!(
        solve_eq_qp(&p, &SolverOptions::default()),
        Err(Error::Unbounded)
    ));
    // flat with zero slope: minimum-norm answer
    let p = EqQp::new(dmatrix![1.0, 0.0; 0.0, 0.0], dvector![-1.0, 0.0]);
    let r = solve_eq_qp(&p, &SolverOptions::default()).unwrap();
    assert_relative_eq!(r.solution, dvector![1.0, 0.0], epsilon = 1e-12);
}

#[test]
fn rejects_asymmetric_hessian() {
    let p = EqQp::new(dmatrix![1.0, 1.0; 0.0, 1.0], DVector::zeros(2));
    assert!(solve_eq_qp(&p, &SolverOptions::default()).is_err());
}

#[test]
fn eq_qp_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_feasible(9, 3, &mut rng);
    let a = solve_eq_qp(&p, &SolverOptions::default()).unwrap();
    let b = solve_eq_qp(&p, &SolverOptions::default()).unwrap();
    assert_eq!(a.solution, b.solution);
}

#[test]
fn scalar_soft_threshold() {
    // ½(g-3)² + |g|
    let p = EqQp::new(dmatrix![1.0], dvector![-3.0]);
    let r = solve_l1_qp(&p, 1.0, &[true], &SolverOptions::default()).unwrap();
    assert!(r.converged);
    assert_relative_eq!(r.solution[0], 2.0, epsilon = 1e-10);
    let r = solve_l1_qp(&p, 5.0, &[true], &SolverOptions::default()).unwrap();
    assert_eq!(r.solution[0], 0.0);
}

#[test]
fn l1_with_zero_weight_matches_eq_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_feasible(7, 2, &mut rng);
    let a = solve_eq_qp(&p, &SolverOptions::default()).unwrap();
    let b = solve_l1_qp(&p, 0.0, &[true; 7], &SolverOptions::default()).unwrap();
    assert!((a.solution - b.solution).amax() <= 1e-8);
}

/// Checks optimality from scratch: multipliers fitted on the support, then the
/// coordinatewise subgradient inclusion.
fn independent_subgradient_gap(p: &EqQp, lambda: f64, sel: &[bool], z: &DVector<f64>) -> f64 {
    let grad = &p.hessian * z + &p.linear;
    let n = z.len();
    let support: Vec<usize> = (0..n).filter(|&i| !sel[i] || z[i] != 0.0).collect();
    let target = DVector::from_fn(support.len(), |a, _| {
        let i = support[a];
        let s = if sel[i] { lambda * z[i].signum() } else { 0.0 };
        -(grad[i] + s)
    });
    let k = p.eq_matrix.nrows();
    let nu = if k > 0 && !support.is_empty() {
        let at = DMatrix::from_fn(support.len(), k, |a, r| p.eq_matrix[(r, support[a])]);
        at.svd(true, true).solve(&target, 1e-12).unwrap()
    } else {
        DVector::zeros(k)
    };
    let r = grad + p.eq_matrix.transpose() * nu;
    let mut gap: f64 = 0.0;
    for i in 0..n {
        let v = if !sel[i] {
            r[i].abs()
        } else if z[i] == 0.0 {
            (r[i].abs() - lambda).max(0.0)
        } else {
            (r[i] + lambda * z[i].signum()).abs()
        };
        gap = gap.max(v);
    }
    gap
}

#[test]
fn random_l1_instances_satisfy_subgradient_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..40 {
        let n = rng.gen_range(2..=10);
        let k = rng.gen_range(0..n / 2 + 1);
        let p = random_feasible(n, k, &mut rng);
        let lambda = rng.gen_range(0.05..3.0);
        let sel: Vec<bool> = (0..n).map(|i| i % 3 != 2).collect();
        let r = solve_l1_qp(&p, lambda, &sel, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        let gap = independent_subgradient_gap(&p, lambda, &sel, &r.solution);
        assert!(gap <= 1e-6, "subgradient gap {gap}");
        assert!((&p.eq_matrix * &r.solution - &p.eq_rhs).norm() <= 1e-8);
    }
}

#[test]
fn l1_incumbent_trace_is_non_increasing_after_transient() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let p = random_feasible(10, 3, &mut rng);
    let r = solve_l1_qp(&p, 0.7, &[true; 10], &SolverOptions::default()).unwrap();
    let t = &r.objective_trace;
    assert!(!t.is_empty());
    for w in t.windows(2).skip(5) {
        assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
    }
}

#[test]
fn l1_not_converged_returns_best_iterate() {
    // A zero optimality tolerance cannot be certified, so the cap is hit.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = random_feasible(8, 2, &mut rng);
    let opts = SolverOptions {
        max_iter: 2,
        opt_tol: 0.0,
        ..SolverOptions::default()
    };
    let r = solve_l1_qp(&p, 0.5, &[true; 8], &opts).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iterations, 2);
    assert_eq!(r.objective_trace.len(), 2);
    assert!((&p.eq_matrix * &r.solution - &p.eq_rhs).norm() <= 1e-8);
}

/// Enumerates every lower/upper/free pattern of a small box-constrained QP.
fn brute_force_box(p: &EqQp) -> Option<(DVector<f64>, f64)> {
    let n = p.dim();
    let (lo, hi) = p.bounds.clone().unwrap();
    let k = p.eq_matrix.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let pattern: Vec<usize> = (0..n)
            .map(|_| {
                let d = c % 3;
                c /= 3;
                d
            })
            .collect();
        let fixed: Vec<usize> = (0..n).filter(|&i| pattern[i] != 2).collect();
        let m = k + fixed.len();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        let mut rhs = DVector::zeros(n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        for i in 0..n {
            rhs[i] = -p.linear[i];
        }
        for r in 0..k {
            for j in 0..n {
                kkt[(n + r, j)] = p.eq_matrix[(r, j)];
                kkt[(j, n + r)] = p.eq_matrix[(r, j)];
            }
            rhs[n + r] = p.eq_rhs[r];
        }
        for (f, &i) in fixed.iter().enumerate() {
            kkt[(n + k + f, i)] = 1.0;
            kkt[(i, n + k + f)] = 1.0;
            rhs[n + k + f] = if pattern[i] == 0 { lo[i] } else { hi[i] };
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        let feasible = (0..n).all(|i| z[i] >= lo[i] - 1e-9 && z[i] <= hi[i] + 1e-9)
            && (&p.eq_matrix * &z - &p.eq_rhs).norm() < 1e-8;
        if feasible {
            let f = p.objective(&z);
            if best.as_ref().map_or(true, |(_, b)| f < *b - 1e-12) {
                best = Some((z, f));
            }
        }
    }
    best
}

#[test]
fn box_bounded_qp_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..25 {
        let n = rng.gen_range(2..=5);
        let k = rng.gen_range(0..2);
        let q = random_psd(n, n, &mut rng) + DMatrix::identity(n, n) * 0.2;
        let a = gaussian(k, n, &mut rng);
        let b = &a * DVector::from_fn(n, |_, _| rng.gen_range(-0.4..0.4));
        let lin = DVector::from_fn(n, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); 3.0 * v });
        let p = EqQp::new(q, lin)
            .with_equalities(a, b)
            .with_bounds(DVector::from_element(n, -0.5), DVector::from_element(n, 0.5));
        let r = solve_eq_qp(&p, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        let (zb, fb) = brute_force_box(&p).unwrap();
        assert!((r.objective - fb).abs() <= 1e-8 * (1.0 + fb.abs()));
        assert!((&r.solution - zb).amax() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn argmin_invariant_under_joint_scaling(seed in any::<u64>(), alpha in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..9);
        let p = random_feasible(n, 2, &mut rng);
        let lambda = rng.gen_range(0.1..2.0);
        let sel = vec![true; n];
        let base = solve_l1_qp(&p, lambda, &sel, &SolverOptions::default()).unwrap();
        let scaled = EqQp { hessian: &p.hessian * alpha, linear: &p.linear * alpha, ..p.clone() };
        let other = solve_l1_qp(&scaled, lambda * alpha, &sel, &SolverOptions::default()).unwrap();
        prop_assert!(base.converged && other.converged);
        prop_assert!((base.solution - other.solution).amax() <= 1e-8);
    }
}
