use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ddctrl::experiment::{aggregates_to_csv, emit_results, run_scenario_with, ExperimentConfig, OutputFormat, RunOptions};
use ddctrl::plants::{collect_lv_data, gaussian_input, make_benchmark_plant, LotkaVolterraParams};
use ddctrl::{checks, Error};

#[derive(Parser)]
#[command(name = "ddctrl", version, about = "Direct vs. indirect data-driven control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Benchmark,
    Lv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write per-trial and aggregate results.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        parallel: Option<usize>,
        /// Record wall-clock times (output is then no longer byte-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Simulate a plant under its data-collection input and write the trajectory.
    Simulate {
        #[arg(long, value_enum)]
        plant: PlantArg,
        #[arg(long = "T")]
        t: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Nonlinearity weight for the Lotka-Volterra plant (1 = affine).
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
    /// Run the built-in property checks.
    Check,
}

/// Exit code for a failed command: 2 for configuration and input problems, 1 otherwise.
fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Io { .. } | Error::InvalidArgument(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn run(
    scenario: PathBuf,
    out: PathBuf,
    seed: u64,
    trials: Option<usize>,
    format: Format,
    parallel: Option<usize>,
    timing: bool,
) -> Result<ExitCode, Error> {
    let mut cfg = ExperimentConfig::load(&scenario)?;
    cfg.seed = seed;
    if let Some(n) = trials {
        cfg.trials = n;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let report = run_scenario_with(&cfg, RunOptions { parallel, timing })?;

    let (format, file) = match format {
        Format::Csv => (OutputFormat::Csv, "results.csv"),
        Format::Json => (OutputFormat::Json, "results.json"),
    };
    emit_results(&report, format, &out.join(file))?;
    let agg = out.join("aggregate.csv");
    std::fs::write(&agg, aggregates_to_csv(&report.aggregates)?).map_err(|e| Error::Io { path: agg, source: e })?;
    let echo = out.join("config.json");
    std::fs::write(&echo, cfg.to_json()).map_err(|e| Error::Io { path: echo, source: e })?;

    let failures = report.failures();
    eprintln!(
        "{}: {} records, {} failed, written to {}",
        cfg.name,
        report.results.len(),
        failures,
        out.display()
    );
    for r in report.results.iter().filter(|r| r.failed()).take(5) {
        eprintln!(
            "  trial {} {}: {}",
            r.trial,
            r.method,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(if failures > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn simulate(plant: PlantArg, t: usize, seed: u64, out: PathBuf, epsilon: f64) -> Result<ExitCode, Error> {
    if t == 0 {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    let w = match plant {
        PlantArg::Benchmark => {
            let model = make_benchmark_plant();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = DVector::from_fn(model.order(), |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let u = gaussian_input(t, model.inputs(), 1.0, &mut rng);
            model.simulate_with_state(&x0, &u)?.0
        }
        PlantArg::Lv => {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::InvalidArgument("epsilon must lie in [0, 1]".into()));
            }
            let p = LotkaVolterraParams::default().with_epsilon(epsilon);
            collect_lv_data(&p, p.equilibrium(), t, 0.1, seed)?
        }
    };
    w.write_csv(&out)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            trials,
            format,
            parallel,
            timing,
        } => run(scenario, out, seed, trials, format, parallel, timing),
        Command::Simulate {
            plant,
            t,
            seed,
            out,
            epsilon,
        } => simulate(plant, t, seed, out, epsilon),
        Command::Check => {
            let outcomes = checks::run_all();
            for o in &outcomes {
                println!("{} {:<28} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            Ok(if outcomes.iter().all(|o| o.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    };
    result.unwrap_or_else(|e| fail(&e))
}
