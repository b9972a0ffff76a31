use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{DataMode, ExperimentConfig, MethodSpec, PlantKind, ScenarioKind};
use super::noise::add_noise;
use super::results::{ScenarioReport, TrialResult};
use crate::deepc::{optimal_from_state_with, percent_error, realized_cost, solve_deepc_with, ControlSpec, Regularizer};
use crate::error::{Error, Result};
use crate::indirect::{
    certainty_equivalence_control_min_norm, enforce_causality, fit_spc_predictor, solve_spc_control_with, subspace_id,
    truncate_rank, SpcPredictor,
};
use crate::plants::{gaussian_input, lv_input, make_benchmark_plant, LotkaVolterraParams, Plant, StateSpaceModel};
use crate::signals::{HankelPartition, Trajectory};
use crate::solver::SolverOptions;

const DATA_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const SHARED_STREAM: u64 = u64::MAX;

/// `next_u64` of the ChaCha8 stream `stream` under key `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Seed of trial `trial`; depends only on the master seed and the index.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    sub_seed(master, 1000 + trial as u64)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads for trials; `None` runs sequentially.
    pub parallel: Option<usize>,
    /// Record wall-clock times (makes output non-reproducible).
    pub timing: bool,
}

/// One operating point of the sweep: noise ratio, data length and nonlinearity.
#[derive(Debug, Clone, Copy)]
struct Level {
    nsr: f64,
    t: usize,
    epsilon: f64,
    swept: Option<f64>,
}

fn levels(cfg: &ExperimentConfig) -> Vec<Level> {
    let base = Level {
        nsr: cfg.noise_levels[0],
        t: cfg.t,
        epsilon: cfg.epsilons.first().copied().unwrap_or(0.0),
        swept: None,
    };
    match cfg.scenario {
        ScenarioKind::NoiseSweep => cfg
            .noise_levels
            .iter()
            .map(|&nsr| Level { nsr, swept: Some(nsr), ..base })
            .collect(),
        ScenarioKind::DataLengthSweep => cfg
            .data_lengths
            .iter()
            .map(|&t| Level { t, swept: Some(t as f64), ..base })
            .collect(),
        ScenarioKind::NonlinearitySweep => cfg
            .epsilons
            .iter()
            .map(|&epsilon| Level { epsilon, swept: Some(epsilon), ..base })
            .collect(),
        _ => vec![base],
    }
}

/// The plant a trial's inputs are applied to.
enum Truth {
    Lti(StateSpaceModel),
    LotkaVolterra(LotkaVolterraParams),
}

/// A noise-free experiment: `len` data samples, the `Tini`-sample prefix and the
/// true state at the start of the control horizon. For the LTI benchmark the
/// prefix continues the data run; Lotka-Volterra episodes start afresh.
struct Experiment {
    data: Trajectory,
    w_ini: Trajectory,
    x_start: DVector<f64>,
    truth: Truth,
}

impl Experiment {
    fn generate(cfg: &ExperimentConfig, len: usize, epsilon: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match cfg.plant {
            PlantKind::Benchmark => {
                let model = make_benchmark_plant();
                let n = model.order();
                let x0 = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)));
                let u = gaussian_input(len + cfg.tini, model.inputs(), cfg.input_std, &mut rng);
                let (w, x_start) = model.simulate_with_state(&x0, &u)?;
                Ok(Experiment {
                    data: w.window(0, len)?,
                    w_ini: w.window(len, cfg.tini)?,
                    x_start,
                    truth: Truth::Lti(model),
                })
            }
            PlantKind::LotkaVolterra => {
                let p = LotkaVolterraParams::default().with_epsilon(epsilon);
                let eq = p.equilibrium();
                let s = cfg.lv_initial_spread;
                let perturbed = |rng: &mut ChaCha8Rng| {
                    [
                        eq[0] * (1.0 + s * rng.gen_range(-1.0..=1.0)),
                        eq[1] * (1.0 + s * rng.gen_range(-1.0..=1.0)),
                    ]
                };
                let x_data = perturbed(&mut rng);
                let x_ctrl = perturbed(&mut rng);
                // The control episode starts from its own initial condition, so the
                // task is the same for every ε instead of wherever the data run ended.
                let (data, _) = p.simulate_with_state(x_data, &lv_input(&p, 0, len, cfg.lv_input_sigma, &mut rng))?;
                let u_ini = lv_input(&p, len, cfg.tini, cfg.lv_input_sigma, &mut rng);
                let (w_ini, x) = p.simulate_with_state(x_ctrl, &u_ini)?;
                Ok(Experiment {
                    data,
                    w_ini,
                    x_start: DVector::from_row_slice(&x),
                    truth: Truth::LotkaVolterra(p),
                })
            }
        }
    }

    /// Optimal cost over the horizon; for Lotka-Volterra, of the affine linearization.
    fn optimal_cost(&self, spec: &ControlSpec, opts: &SolverOptions) -> Result<f64> {
        match &self.truth {
            Truth::Lti(model) => Ok(optimal_from_state_with(model, &self.x_start, spec, opts)?.cost),
            Truth::LotkaVolterra(p) => {
                let x = DVector::from_row_slice(&[self.x_start[0], self.x_start[1], 1.0]);
                Ok(optimal_from_state_with(&p.affine_model(), &x, spec, opts)?.cost)
            }
        }
    }

    fn realized(&self, u: &DMatrix<f64>, spec: &ControlSpec) -> Result<f64> {
        let plant: &dyn Plant = match &self.truth {
            Truth::Lti(m) => m,
            Truth::LotkaVolterra(p) => p,
        };
        realized_cost(plant, &self.x_start, u, spec).map(|(_, c)| c)
    }
}

/// Hyper-parameter points of one method: (regularizer if direct, param, secondary param).
fn method_points(cfg: &ExperimentConfig, m: &MethodSpec) -> Vec<(Option<Regularizer>, Option<f64>, Option<f64>)> {
    match m {
        MethodSpec::Deepc { .. } => m
            .regularizers(cfg)
            .into_iter()
            .map(|r| {
                let (a, b) = r.params();
                (Some(r), a, b)
            })
            .collect(),
        MethodSpec::Spc { rank, .. } => vec![(None, rank.map(|r| r as f64), None)],
        MethodSpec::SubspaceId { order, .. } => vec![(None, Some(*order as f64), None)],
    }
}

/// Lazily built per-level quantities shared by the methods.
struct LevelCache<'a> {
    data: &'a Trajectory,
    tini: usize,
    horizon: usize,
    part: Option<HankelPartition>,
    spc: Option<SpcPredictor>,
}

impl LevelCache<'_> {
    fn part(&mut self) -> Result<&HankelPartition> {
        if self.part.is_none() {
            self.part = Some(HankelPartition::new(self.data, self.tini, self.horizon)?);
        }
        Ok(self.part.as_ref().expect("just built"))
    }

    fn spc(&mut self) -> Result<&SpcPredictor> {
        if self.spc.is_none() {
            let pred = fit_spc_predictor(self.part()?);
            self.spc = Some(pred);
        }
        Ok(self.spc.as_ref().expect("just built"))
    }
}

/// Planned inputs and predicted cost of one method point.
fn plan(
    cache: &mut LevelCache,
    method: &MethodSpec,
    reg: Option<Regularizer>,
    w_ini: &Trajectory,
    spec: &ControlSpec,
    opts: &SolverOptions,
) -> Result<(DMatrix<f64>, f64)> {
    match method {
        MethodSpec::Deepc { .. } => {
            let reg = reg.expect("direct methods carry a regularizer");
            let sol = solve_deepc_with(cache.part()?, w_ini, spec, reg, opts)?;
            Ok((sol.inputs(), sol.predicted_cost))
        }
        MethodSpec::Spc { rank, causal, .. } => {
            let mut pred = cache.spc()?.clone();
            if let Some(n) = rank {
                pred = truncate_rank(&pred, *n);
            }
            if *causal {
                pred = enforce_causality(&pred);
            }
            let plan = solve_spc_control_with(&pred, w_ini, spec, opts)?;
            Ok((plan.inputs, plan.cost))
        }
        MethodSpec::SubspaceId { order, .. } => {
            let model = subspace_id(cache.data, *order, cache.tini, cache.horizon)?;
            let plan = certainty_equivalence_control_min_norm(&model, w_ini, spec)?;
            Ok((plan.inputs, plan.cost))
        }
    }
}

/// All records of one trial, in (level, method, grid point) order.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize, timing: bool) -> Result<Vec<TrialResult>> {
    let spec = cfg.control_spec()?;
    let opts = cfg.solver.options();
    let seed = trial_seed(cfg.seed, trial);
    let data_seed = match cfg.data_mode {
        DataMode::SharedClean => sub_seed(cfg.seed, SHARED_STREAM),
        DataMode::Fresh => sub_seed(seed, DATA_STREAM),
    };
    let noise_seed = sub_seed(seed, NOISE_STREAM);
    let t_max = cfg.lengths().into_iter().max().expect("validated");

    let mut out = Vec::new();
    for level in levels(cfg) {
        let record = |method: &MethodSpec, p: Option<f64>, q: Option<f64>| {
            let (param1, param2) = match level.swept {
                Some(s) => (Some(s), p),
                None => (p, q),
            };
            TrialResult {
                scenario: cfg.name.clone(),
                trial,
                seed,
                method: method.label(),
                param1,
                param2,
                predicted_err_pct: f64::NAN,
                realized_err_pct: f64::NAN,
                wall_ms: 0.0,
                predicted_cost: f64::NAN,
                realized_cost: f64::NAN,
                optimal_cost: f64::NAN,
                error: None,
            }
        };

        let prepared = Experiment::generate(cfg, t_max, level.epsilon, data_seed).and_then(|exp| {
            let noisy = add_noise(&exp.data, level.nsr, noise_seed, cfg.noise_on_inputs)?;
            let data = noisy.window(t_max - level.t, level.t)?;
            let c_star = exp.optimal_cost(&spec, &opts)?;
            Ok((exp, data, c_star))
        });
        let (exp, data, c_star) = match prepared {
            Ok(v) => v,
            Err(e) => {
                for m in &cfg.methods {
                    for (_, p, q) in method_points(cfg, m) {
                        out.push(TrialResult {
                            error: Some(format!("setup: {e}")),
                            ..record(m, p, q)
                        });
                    }
                }
                continue;
            }
        };

        let mut cache = LevelCache {
            data: &data,
            tini: cfg.tini,
            horizon: cfg.l,
            part: None,
            spc: None,
        };
        for m in &cfg.methods {
            for (reg, p, q) in method_points(cfg, m) {
                let mut r = record(m, p, q);
                r.optimal_cost = c_star;
                let start = Instant::now();
                let outcome = plan(&mut cache, m, reg, &exp.w_ini, &spec, &opts)
                    .and_then(|(u, predicted)| Ok((predicted, exp.realized(&u, &spec)?)));
                if timing {
                    r.wall_ms = start.elapsed().as_secs_f64() * 1e3;
                }
                match outcome {
                    Ok((predicted, realized)) if predicted.is_finite() && realized.is_finite() => {
                        r.predicted_cost = predicted;
                        r.realized_cost = realized;
                        r.predicted_err_pct = percent_error(predicted, c_star);
                        r.realized_err_pct = percent_error(realized, c_star);
                    }
                    Ok(_) => r.error = Some("non-finite cost".into()),
                    Err(e) => r.error = Some(e.to_string()),
                }
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// Runs every trial sequentially.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ScenarioReport> {
    run_scenario_with(cfg, RunOptions::default())
}

/// Runs every trial; solver failures are recorded per point rather than aborting.
/// Trials are independent, so the result does not depend on `parallel`.
pub fn run_scenario_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ScenarioReport> {
    cfg.validate()?;
    let run = |t: usize| run_trial(cfg, t, opts.timing);
    let per_trial: Vec<Result<Vec<TrialResult>>> = match opts.parallel {
        Some(threads) if threads > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            pool.install(|| (0..cfg.trials).into_par_iter().map(run).collect())
        }
        _ => (0..cfg.trials).map(run).collect(),
    };
    let mut results = Vec::new();
    for r in per_trial {
        results.extend(r?);
    }
    Ok(ScenarioReport::new(cfg.clone(), results))
}
