use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;
use crate::testutil::{gaussian, rng};
use crate::signals::Trajectory;

fn small_config(methods: &str, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "name": "small",
            "scenario": "noise_sweep",
            "plant": "benchmark",
            "t": 120, "tini": 5, "l": 20,
            "weights": [0.01, 2000.0],
            "reference": {{ "kind": "sine" }},
            "noise_levels": [0.0],
            "trials": 3,
            "seed": 7,
            "methods": [{methods}]
            {extra}
        }}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

fn record(i: usize, r: &mut impl rand::Rng) -> TrialResult {
    let maybe = |r: &mut dyn rand::RngCore| {
        let v: f64 = rand::Rng::gen_range(r, -1e3..1e3);
        if rand::Rng::gen_bool(r, 0.2) { None } else { Some(v) }
    };
    let failed = r.gen_bool(0.15);
    let val = |r: &mut dyn rand::RngCore| if failed { f64::NAN } else { rand::Rng::gen_range(r, -50.0..5e3) };
    TrialResult {
        scenario: "s".into(),
        trial: i,
        seed: r.gen(),
        method: format!("m{}", r.gen_range(0..3)),
        param1: maybe(r),
        param2: maybe(r),
        predicted_err_pct: val(r),
        realized_err_pct: val(r),
        wall_ms: 0.0,
        predicted_cost: val(r),
        realized_cost: val(r),
        optimal_cost: r.gen_range(0.0..1e4),
        error: failed.then(|| "solver failed, with \"quotes\"".into()),
    }
}

#[test]
fn zero_noise_is_bitwise_identity() {
    let w = Trajectory::new(gaussian(200, 3, &mut rng(1)), 1).unwrap();
    let out = add_measurement_noise(&w, 0.0, 5).unwrap();
    assert!(w.data().iter().zip(out.data().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn noise_level_matches_ratio_and_spares_inputs() {
    let w = Trajectory::new(gaussian(10_000, 2, &mut rng(2)) * 3.0, 1).unwrap();
    let out = add_measurement_noise(&w, 0.05, 9).unwrap();
    assert_eq!(out.data().column(0), w.data().column(0));
    let diff = out.data().column(1) - w.data().column(1);
    let std = (diff.norm_squared() / diff.len() as f64).sqrt();
    let ratio = std / w.column_rms(1);
    assert!((0.045..=0.055).contains(&ratio), "ratio {ratio}");

    let both = add_noise(&w, 0.05, 9, true).unwrap();
    assert_ne!(both.data().column(0), w.data().column(0));
}

#[test]
fn noise_is_deterministic_and_scales_one_realization() {
    let w = Trajectory::new(gaussian(300, 2, &mut rng(3)), 1).unwrap();
    let a = add_measurement_noise(&w, 0.02, 4).unwrap();
    assert_eq!(a, add_measurement_noise(&w, 0.02, 4).unwrap());
    assert_ne!(a, add_measurement_noise(&w, 0.02, 5).unwrap());
    let b = add_measurement_noise(&w, 0.04, 4).unwrap();
    let da = a.data() - w.data();
    let db = b.data() - w.data();
    assert!((db - da * 2.0).amax() < 1e-12);
}

#[test]
fn negative_noise_ratio_is_rejected() {
    let w = Trajectory::new(DMatrix::zeros(4, 2), 1).unwrap();
    assert!(add_measurement_noise(&w, -0.1, 0).is_err());
    assert!(add_measurement_noise(&w, f64::NAN, 0).is_err());
}

#[test]
fn single_record_csv_has_header_and_one_row() {
    let r = record(0, &mut rng(4));
    let csv = results_to_csv(&[r]).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
}

#[test]
fn empty_results_are_not_emitted() {
    let cfg = small_config(r#"{ "method": "subspace_id", "order": 5 }"#, "");
    let report = ScenarioReport::new(cfg, Vec::new());
    let dir = std::env::temp_dir().join("ddctrl-empty-emit");
    assert!(emit_results(&report, OutputFormat::Csv, &dir.join("r.csv")).is_err());
}

#[test]
fn json_round_trip_is_exact() {
    let mut g = rng(5);
    let results: Vec<TrialResult> = (0..100).map(|i| record(i, &mut g)).collect();
    let cfg = small_config(r#"{ "method": "subspace_id", "order": 5 }"#, "");
    let report = ScenarioReport::new(cfg, results);
    let back = report_from_json(&report_to_json(&report).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn csv_round_trip_preserves_the_csv_columns() {
    let mut g = rng(6);
    let results: Vec<TrialResult> = (0..100).map(|i| record(i, &mut g)).collect();
    let back = results_from_csv(&results_to_csv(&results).unwrap()).unwrap();
    assert_eq!(back.len(), results.len());
    for (a, b) in results.iter().zip(&back) {
        let same = |x: f64, y: f64| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan());
        assert_eq!((a.trial, a.seed, &a.method), (b.trial, b.seed, &b.method));
        assert_eq!(a.param1.map(f64::to_bits), b.param1.map(f64::to_bits));
        assert_eq!(a.param2.map(f64::to_bits), b.param2.map(f64::to_bits));
        assert!(same(a.predicted_err_pct, b.predicted_err_pct));
        assert!(same(a.realized_err_pct, b.realized_err_pct));
        assert!(same(a.wall_ms, b.wall_ms));
    }
}

#[test]
fn output_format_parses() {
    assert_eq!("csv".parse::<OutputFormat>().unwrap(), OutputFormat::Csv);
    assert_eq!("json".parse::<OutputFormat>().unwrap(), OutputFormat::Json);
    assert!("xml".parse::<OutputFormat>().is_err());
}

fn brute_quantile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (s.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    s[lo] * (1.0 - (h - lo as f64)) + s[hi] * (h - lo as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregates_match_brute_force(
        values in prop::collection::vec((0usize..3, -1e3f64..1e3, prop::bool::weighted(0.1)), 1..60)
    ) {
        let results: Vec<TrialResult> = values.iter().enumerate().map(|(i, &(k, v, fail))| TrialResult {
            scenario: "s".into(),
            trial: i,
            seed: 0,
            method: format!("m{k}"),
            param1: Some(k as f64),
            param2: None,
            predicted_err_pct: v,
            realized_err_pct: if fail { f64::NAN } else { 2.0 * v },
            wall_ms: 0.0,
            predicted_cost: v,
            realized_cost: v,
            optimal_cost: 1.0,
            error: fail.then(|| "x".into()),
        }).collect();
        let rows = aggregate(&results);
        let mut seen = Vec::new();
        for r in &results {
            if !seen.contains(&r.method) { seen.push(r.method.clone()); }
        }
        prop_assert_eq!(rows.iter().map(|r| r.method.clone()).collect::<Vec<_>>(), seen);
        for row in &rows {
            let group: Vec<&TrialResult> = results.iter().filter(|r| r.method == row.method).collect();
            prop_assert_eq!(row.trials, group.len());
            prop_assert_eq!(row.failures, group.iter().filter(|r| r.failed()).count());
            let ok: Vec<f64> = group.iter().map(|r| r.realized_err_pct).filter(|v| v.is_finite()).collect();
            if ok.is_empty() {
                prop_assert!(row.realized_err_pct.median.is_nan());
            } else {
                let mean = ok.iter().sum::<f64>() / ok.len() as f64;
                prop_assert!((row.realized_err_pct.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
                for (p, got) in [(0.25, row.realized_err_pct.q1), (0.5, row.realized_err_pct.median), (0.75, row.realized_err_pct.q3)] {
                    let want = brute_quantile(&ok, p);
                    prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn quartiles_are_ordered(v in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let s = Summary::of(&v);
        prop_assert!(s.q1 <= s.median && s.median <= s.q3);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= s.q1 && s.q3 <= hi);
    }
}

#[test]
fn seeds_depend_only_on_master_and_index() {
    assert_eq!(trial_seed(3, 4), trial_seed(3, 4));
    assert_ne!(trial_seed(3, 4), trial_seed(3, 5));
    assert_ne!(trial_seed(3, 4), trial_seed(4, 4));
    assert_ne!(sub_seed(3, 1), sub_seed(3, 2));
}

const BOTH: &str = r#"{ "method": "deepc", "reg": "proj_two_norm_sq", "lambda": 1.0, "label": "direct" },
                      { "method": "subspace_id", "order": 5, "label": "indirect" }"#;

#[test]
fn noise_free_run_is_exact_for_consistent_methods() {
    let report = run_scenario(&small_config(BOTH, "")).unwrap();
    assert_eq!(report.results.len(), 6);
    assert_eq!(report.failures(), 0);
    for r in &report.results {
        assert!(r.realized_err_pct.abs() <= 1e-4, "{} {}", r.method, r.realized_err_pct);
        assert!(r.optimal_cost > 0.0);
    }
}

#[test]
fn runs_are_reproducible_and_order_independent() {
    let cfg = ExperimentConfig {
        noise_levels: vec![0.0, 0.02],
        ..small_config(BOTH, "")
    };
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a, b);

    let c = run_scenario_with(
        &cfg,
        RunOptions {
            parallel: Some(3),
            timing: false,
        },
    )
    .unwrap();
    assert_eq!(a, c);

    // A trial's records do not depend on which other trials run.
    let alone = run_trial(&cfg, 2, false).unwrap();
    let from_run: Vec<_> = a.results.iter().filter(|r| r.trial == 2).cloned().collect();
    assert_eq!(alone, from_run);

    let more = run_scenario(&ExperimentConfig { trials: 5, ..cfg.clone() }).unwrap();
    assert_eq!(&more.results[..a.results.len()], &a.results[..]);

    let other = run_scenario(&ExperimentConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.results[2].realized_err_pct, other.results[2].realized_err_pct);
}

#[test]
fn shared_clean_mode_reuses_the_data_set() {
    let cfg = small_config(BOTH, r#", "data_mode": "shared_clean""#);
    let report = run_scenario(&cfg).unwrap();
    let c: Vec<f64> = report.results.iter().filter(|r| r.method == "direct").map(|r| r.optimal_cost).collect();
    assert!(c.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn swept_value_is_param1() {
    let cfg = ExperimentConfig {
        noise_levels: vec![0.0, 0.03],
        ..small_config(r#"{ "method": "deepc", "reg": "one_norm", "label": "l1" }"#, r#", "lambda_grid": [1.0, 10.0]"#)
    };
    let report = run_scenario(&ExperimentConfig { trials: 1, ..cfg }).unwrap();
    let keys: Vec<_> = report.results.iter().map(|r| (r.param1, r.param2)).collect();
    assert_eq!(
        keys,
        vec![
            (Some(0.0), Some(1.0)),
            (Some(0.0), Some(10.0)),
            (Some(0.03), Some(1.0)),
            (Some(0.03), Some(10.0)),
        ]
    );
}

#[test]
fn method_failures_are_recorded_not_fatal() {
    // An unattainable iteration cap makes the ℓ1 solver give up.
    let cfg = ExperimentConfig {
        noise_levels: vec![0.05],
        ..small_config(
            r#"{ "method": "deepc", "reg": "one_norm", "lambda": 1.0, "label": "capped" },
               { "method": "subspace_id", "order": 5, "label": "indirect" }"#,
            r#", "solver": { "feas_tol": 1e-9, "opt_tol": 0.0, "max_iter": 3 }"#,
        )
    };
    let report = run_scenario(&cfg).unwrap();
    let capped: Vec<_> = report.results.iter().filter(|r| r.method == "capped").collect();
    assert!(capped.iter().all(|r| r.failed() && r.realized_err_pct.is_nan()));
    assert!(report.results.iter().filter(|r| r.method == "indirect").all(|r| !r.failed()));
    let row = report.row("capped", Some(0.05)).unwrap();
    assert_eq!(row.failures, 3);
    assert!(row.realized_err_pct.median.is_nan());
}

#[test]
fn invalid_configs_are_rejected() {
    let base = small_config(BOTH, "");
    let bad = [
        ExperimentConfig { trials: 0, ..base.clone() },
        ExperimentConfig { t: 40, ..base.clone() },
        ExperimentConfig { weights: vec![1.0], ..base.clone() },
        ExperimentConfig { noise_levels: vec![-0.1], ..base.clone() },
        ExperimentConfig { methods: vec![], ..base.clone() },
        ExperimentConfig {
            scenario: ScenarioKind::DataLengthSweep,
            ..base.clone()
        },
        ExperimentConfig {
            scenario: ScenarioKind::NonlinearitySweep,
            epsilons: vec![0.5],
            ..base.clone()
        },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(crate::Error::Config(_))));
        assert!(run_scenario(&cfg).is_err());
    }
    assert!(base.validate().is_ok());
    assert_eq!(base.min_data_length(), 59);
    assert!(ExperimentConfig::from_json(r#"{ "name": "x", "bogus": 1 }"#).is_err());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = small_config(BOTH, r#", "bounds": [[-5, -10], [5, 10]]"#);
    assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}

#[test]
fn shipped_scenarios_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert_eq!(n, 6);
}
