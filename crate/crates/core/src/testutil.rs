//! Fixtures shared by the unit tests.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::deepc::{ControlSpec, CostWeight};
use crate::plants::{gaussian_input, make_benchmark_plant, StateSpaceModel};
use crate::signals::{HankelPartition, Trajectory};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn random_plant(n: usize, m: usize, p: usize, rng: &mut ChaCha8Rng) -> StateSpaceModel {
    crate::plants::random_stable_plant(n, m, p, rng)
}

/// A clean experiment of `len` samples from a random initial state; also returns the final state.
pub fn experiment(model: &StateSpaceModel, len: usize, rng: &mut ChaCha8Rng) -> (Trajectory, DVector<f64>, DVector<f64>) {
    let x0 = DVector::from_fn(model.order(), |_, _| StandardNormal.sample(rng));
    let u = gaussian_input(len, model.inputs(), 1.0, rng);
    let (w, x_end) = model.simulate_with_state(&x0, &u).unwrap();
    (w, x0, x_end)
}

pub fn benchmark_reference(horizon: usize) -> Trajectory {
    let y = DMatrix::from_fn(horizon, 1, |t, _| {
        (2.0 * std::f64::consts::PI * t as f64 / (horizon as f64 - 1.0)).sin()
    });
    Trajectory::from_io(&DMatrix::zeros(horizon, 1), &y).unwrap()
}

pub fn benchmark_spec(tini: usize, horizon: usize) -> ControlSpec {
    ControlSpec::new(tini, horizon, benchmark_reference(horizon), CostWeight::PerChannel(vec![0.01, 2000.0])).unwrap()
}

/// Noise-free benchmark data plus a consistent prefix and a feasible reference
/// (the continuation of the same experiment).
pub struct CleanBenchmark {
    pub model: StateSpaceModel,
    pub part: HankelPartition,
    pub w_ini: Trajectory,
    pub w_future: Trajectory,
    /// State at the start of the horizon.
    pub x_start: DVector<f64>,
}

pub fn clean_benchmark(t: usize, tini: usize, horizon: usize, seed: u64) -> CleanBenchmark {
    let model = make_benchmark_plant();
    let mut r = rng(seed);
    let (data, _, _) = experiment(&model, t, &mut r);
    let (run, _, _) = experiment(&model, tini + horizon, &mut r);
    let w_ini = run.window(0, tini).unwrap();
    let w_future = run.window(tini, horizon).unwrap();
    // Recover the state from the run itself (the plant is observable with lag 5).
    let x0 = {
        let o = model.observability(tini + horizon);
        let g = model.convolution(tini + horizon);
        crate::linalg::least_squares(
            &o,
            &DMatrix::from_column_slice(
                (tini + horizon) * model.outputs(),
                1,
                (run.stacked_outputs() - g * run.stacked_inputs()).as_slice(),
            ),
        )
        .unwrap()
        .column(0)
        .into_owned()
    };
    let (_, x_start) = model.simulate_with_state(&x0, &w_ini.input_matrix()).unwrap();
    CleanBenchmark {
        part: HankelPartition::new(&data, tini, horizon).unwrap(),
        model,
        w_ini,
        w_future,
        x_start,
    }
}

/// Adds i.i.d. output noise with the given standard deviation.
pub fn noisy_outputs(w: &Trajectory, std: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut d = w.data().clone();
    for c in w.inputs()..w.channels() {
        for t in 0..w.len() {
            let e: f64 = StandardNormal.sample(rng);
            d[(t, c)] += std * e;
        }
    }
    Trajectory::new(d, w.inputs()).unwrap()
}
