//! Monte-Carlo comparison of direct and indirect controllers over sweeps of
//! regularization, noise, data length and nonlinearity.

mod config;
mod noise;
mod results;
mod runner;

pub use config::{
    DataMode, ExperimentConfig, MethodSpec, PlantKind, ReferenceSpec, RegKind, ScenarioKind, SolverSettings,
};
pub use noise::{add_measurement_noise, add_noise};
pub use results::{
    aggregate, aggregates_to_csv, emit_results, quantile_sorted, report_from_json, report_to_json, results_from_csv,
    results_to_csv, AggregateRow, OutputFormat, ScenarioReport, Summary, TrialResult, CSV_COLUMNS,
};
pub use runner::{run_scenario, run_scenario_with, run_trial, sub_seed, trial_seed, RunOptions};

#[cfg(test)]
mod tests;
