use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::deepc::{ControlSpec, CostWeight, Regularizer};
use crate::error::{Error, Result};
use crate::signals::Trajectory;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LambdaSweep,
    TwoNormVsProj,
    HybridGrid,
    DataLengthSweep,
    NoiseSweep,
    NonlinearitySweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Benchmark,
    LotkaVolterra,
}

/// How trials obtain their noise-free data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// One noise-free experiment (from the master seed) shared by all trials; only the noise differs.
    SharedClean,
    /// A fresh experiment (initial state and input) per trial.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    /// Zero inputs and `y_r(t) = sin(2πt/(L−1))` on every output.
    Sine,
    /// Constant per-channel values, inputs first.
    Constant { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    None,
    OneNorm,
    TwoNormSq,
    ProjTwoNormSq,
    Hybrid,
}

/// One controller to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    /// Direct method; `lambda` (and `lambda2` for hybrid) fixed, or swept over the config grids when absent.
    Deepc {
        reg: RegKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda2: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// Least-squares predictor, optionally rank-truncated and made causal.
    Spc {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rank: Option<usize>,
        #[serde(default)]
        causal: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// Subspace identification of an order-`order` model, then certainty-equivalence control.
    SubspaceId {
        order: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Deepc { reg, label, .. } => label.clone().unwrap_or_else(|| {
                format!("deepc_{}", serde_json::to_value(reg).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            }),
            MethodSpec::Spc { rank, causal, label } => label.clone().unwrap_or_else(|| {
                let mut s = "spc".to_string();
                if let Some(r) = rank {
                    s.push_str(&format!("_rank{r}"));
                }
                if *causal {
                    s.push_str("_causal");
                }
                s
            }),
            MethodSpec::SubspaceId { order, label } => label.clone().unwrap_or_else(|| format!("subspace_id_n{order}")),
        }
    }

    /// Regularizers this method evaluates, in grid order.
    pub(crate) fn regularizers(&self, cfg: &ExperimentConfig) -> Vec<Regularizer> {
        let MethodSpec::Deepc { reg, lambda, lambda2, .. } = self else {
            return Vec::new();
        };
        let grid1 = lambda.map_or_else(|| cfg.lambda_grid.clone(), |l| vec![l]);
        let grid2 = lambda2.map_or_else(|| cfg.lambda2_grid.clone(), |l| vec![l]);
        match reg {
            RegKind::None => vec![Regularizer::None],
            RegKind::OneNorm => grid1.iter().map(|&lambda| Regularizer::OneNorm { lambda }).collect(),
            RegKind::TwoNormSq => grid1.iter().map(|&lambda| Regularizer::TwoNormSq { lambda }).collect(),
            RegKind::ProjTwoNormSq => grid1.iter().map(|&lambda| Regularizer::ProjTwoNormSq { lambda }).collect(),
            RegKind::Hybrid => grid1
                .iter()
                .flat_map(|&lambda1| grid2.iter().map(move |&lambda2| Regularizer::Hybrid { lambda1, lambda2 }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverSettings {
            feas_tol: d.feas_tol,
            opt_tol: d.opt_tol,
            max_iter: d.max_iter,
        }
    }
}

impl SolverSettings {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            feas_tol: self.feas_tol,
            opt_tol: self.opt_tol,
            max_iter: self.max_iter,
            ..SolverOptions::default()
        }
    }
}

fn default_one() -> f64 {
    1.0
}

fn default_lv_sigma() -> f64 {
    0.1
}

fn default_lv_spread() -> f64 {
    0.2
}

fn default_trials() -> usize {
    20
}

fn default_data_mode() -> DataMode {
    DataMode::Fresh
}

/// A scenario description; JSON field names are the snake_case names below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario id written into every record.
    pub name: String,
    pub scenario: ScenarioKind,
    pub plant: PlantKind,
    /// Data length (the longest one for data-length sweeps if `data_lengths` is empty).
    pub t: usize,
    pub tini: usize,
    /// Control horizon `L`.
    pub l: usize,
    /// Per-channel cost weights, inputs first: `W = I_L ⊗ diag(weights)`.
    pub weights: Vec<f64>,
    pub reference: ReferenceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
    /// Noise-to-signal ratios; the first one is used by scenarios that do not sweep noise.
    pub noise_levels: Vec<f64>,
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub lambda2_grid: Vec<f64>,
    #[serde(default)]
    pub data_lengths: Vec<usize>,
    /// Nonlinearity levels for the Lotka-Volterra plant; the first one is used by other scenarios.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_data_mode")]
    pub data_mode: DataMode,
    #[serde(default)]
    pub noise_on_inputs: bool,
    /// Standard deviation of the Gaussian excitation for the benchmark plant.
    #[serde(default = "default_one")]
    pub input_std: f64,
    /// Standard deviation of the random part of the Lotka-Volterra input.
    #[serde(default = "default_lv_sigma")]
    pub lv_input_sigma: f64,
    /// Initial populations are drawn uniformly within this relative distance of the equilibrium.
    #[serde(default = "default_lv_spread")]
    pub lv_initial_spread: f64,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn inputs(&self) -> usize {
        1
    }

    pub fn outputs(&self) -> usize {
        match self.plant {
            PlantKind::Benchmark => 1,
            PlantKind::LotkaVolterra => 2,
        }
    }

    /// True order used for the persistency-of-excitation data bound.
    fn plant_order(&self) -> usize {
        match self.plant {
            PlantKind::Benchmark => 5,
            PlantKind::LotkaVolterra => 3,
        }
    }

    /// Data lengths evaluated by this scenario.
    pub fn lengths(&self) -> Vec<usize> {
        if self.scenario == ScenarioKind::DataLengthSweep {
            self.data_lengths.clone()
        } else {
            vec![self.t]
        }
    }

    /// Smallest `T` for which a generic input can be persistently exciting of order `Tini + L + n`.
    pub fn min_data_length(&self) -> usize {
        (self.inputs() + 1) * (self.tini + self.l + self.plant_order()) - 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.tini == 0 || self.l < 2 {
            return bad("need tini ≥ 1 and l ≥ 2".into());
        }
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        let q = self.inputs() + self.outputs();
        if self.weights.len() != q || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return bad(format!("weights must be {q} nonnegative numbers"));
        }
        if let ReferenceSpec::Constant { values } = &self.reference {
            if values.len() != q {
                return bad(format!("constant reference needs {q} values"));
            }
        }
        if let Some((lo, hi)) = &self.bounds {
            if lo.len() != q || hi.len() != q || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                return bad("bounds must be two length-q vectors with lower ≤ upper".into());
            }
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|v| !(*v >= 0.0)) {
            return bad("noise_levels must be a nonempty list of nonnegative ratios".into());
        }
        if self.plant == PlantKind::LotkaVolterra && self.epsilons.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return bad("epsilons must lie in [0, 1]".into());
        }
        match self.scenario {
            ScenarioKind::DataLengthSweep if self.data_lengths.is_empty() => {
                return bad("data_length_sweep needs data_lengths".into())
            }
            ScenarioKind::NonlinearitySweep if self.epsilons.is_empty() => {
                return bad("nonlinearity_sweep needs epsilons".into())
            }
            ScenarioKind::NonlinearitySweep if self.plant != PlantKind::LotkaVolterra => {
                return bad("nonlinearity_sweep requires the lotka_volterra plant".into())
            }
            _ => {}
        }
        for m in &self.methods {
            match m {
                MethodSpec::Deepc { reg, lambda, lambda2, .. } => {
                    let needs1 = *reg != RegKind::None && lambda.is_none();
                    let needs2 = *reg == RegKind::Hybrid && lambda2.is_none();
                    if (needs1 && self.lambda_grid.is_empty()) || (needs2 && self.lambda2_grid.is_empty()) {
                        return bad(format!("{} needs a λ grid or a fixed λ", m.label()));
                    }
                    let all = lambda.iter().chain(lambda2).chain(&self.lambda_grid).chain(&self.lambda2_grid);
                    if all.clone().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                        return bad("λ values must be finite and nonnegative".into());
                    }
                }
                MethodSpec::Spc { rank: Some(0), .. } | MethodSpec::SubspaceId { order: 0, .. } => {
                    return bad(format!("{}: order must be positive", m.label()));
                }
                _ => {}
            }
        }
        let min_t = self.min_data_length();
        for t in self.lengths() {
            if t < min_t {
                return bad(format!(
                    "T = {t} is below the minimum data length {min_t} for Tini={}, L={}",
                    self.tini, self.l
                ));
            }
        }
        if !(self.input_std > 0.0) || !(self.lv_input_sigma >= 0.0) || !(self.lv_initial_spread >= 0.0) {
            return bad("input_std must be positive; lv_input_sigma and lv_initial_spread nonnegative".into());
        }
        Ok(())
    }

    pub fn control_spec(&self) -> Result<ControlSpec> {
        let (m, p, l) = (self.inputs(), self.outputs(), self.l);
        let reference = match &self.reference {
            ReferenceSpec::Sine => {
                let y = DMatrix::from_fn(l, p, |t, _| {
                    (2.0 * std::f64::consts::PI * t as f64 / (l as f64 - 1.0)).sin()
                });
                Trajectory::from_io(&DMatrix::zeros(l, m), &y)?
            }
            ReferenceSpec::Constant { values } => {
                Trajectory::new(DMatrix::from_fn(l, m + p, |_, c| values[c]), m)?
            }
        };
        let spec = ControlSpec::new(self.tini, l, reference, CostWeight::PerChannel(self.weights.clone()))?;
        match &self.bounds {
            Some((lo, hi)) => spec.with_bounds(lo.clone(), hi.clone()),
            None => Ok(spec),
        }
    }
}
