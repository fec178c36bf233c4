use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use drgp::bench::{preset, PRESETS};
use drgp::check::run_checks;
use drgp::experiment::{run_experiment, ExperimentSpec, Family, SavedModel};
use drgp::io::{load_csv, OutputColumn};
use drgp::report::{write_trace, TraceRow};
use drgp::{worker_count, WORKERS_ENV};
use drgp_core::data::{rmse, ScaleMode};
use drgp_core::trainer::Selection;

#[derive(Parser)]
#[command(
    name = "drgp",
    version,
    about = "Deep recurrent sparse spectrum GPs for system identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the leading rows of a CSV file and free-simulate the rows after them.
    Train(TrainArgs),
    /// Continue a free simulation from a saved model over new inputs.
    Simulate(SimulateArgs),
    /// Run a benchmark preset on a directory of converted data sets.
    Bench(BenchArgs),
    /// Run the numerical self-checks.
    Check {
        /// Monte-Carlo samples per variant.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Std,
    Variance,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "drgp-ss")]
    family: Family,
    /// Hidden layers.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Spectral features per layer.
    #[arg(long, default_value_t = 100)]
    features: usize,
    /// Time lag of inputs and latent states.
    #[arg(long, default_value_t = 10)]
    lags: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Total optimiser iterations.
    #[arg(long, default_value_t = 75)]
    iters: usize,
    /// Iterations with amplitudes held fixed.
    #[arg(long, default_value_t = 15)]
    phase_one: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Map tasks per objective evaluation.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "std")]
    scale: Scale,
    /// Report errors on the normalised scale.
    #[arg(long)]
    report_normalized: bool,
    /// Pick the restart with the lowest test error instead of the highest objective.
    #[arg(long)]
    select_by_test: bool,
}

impl ModelArgs {
    fn apply(&self, spec: &mut ExperimentSpec) {
        spec.training.restarts = self.restarts;
        spec.training.total_iters = self.iters;
        spec.training.phase_one_iters = self.phase_one;
        spec.training.seed = self.seed;
        if self.select_by_test {
            spec.training.selection = Selection::Validation;
        }
        spec.narx_iters = self.iters.max(spec.narx_iters);
        spec.workers = worker_count(self.workers);
        spec.scale = match self.scale {
            Scale::Std => ScaleMode::StdDev,
            Scale::Variance => ScaleMode::Variance,
        };
        spec.report_normalized = self.report_normalized;
    }
}

#[derive(Args)]
struct TrainArgs {
    /// CSV with a header row; inputs first, output last unless overridden.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    output_column: Option<String>,
    #[arg(long)]
    train: usize,
    #[arg(long)]
    test: usize,
    #[arg(long, default_value = "run")]
    name: String,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// `model.json` written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Inputs that directly follow the training rows, with the same columns.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    output_column: Option<String>,
    #[arg(long, default_value = "simulation.csv")]
    out: PathBuf,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// One of the preset names, or `all`.
    preset: String,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, value_enum, num_args = 1.., default_values = ["drgp-ss"])]
    families: Vec<Family>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

fn train(args: TrainArgs) -> Result<()> {
    let m = &args.model;
    let mut spec = ExperimentSpec::new(
        &args.name, &args.data, args.train, args.test, m.family, m.layers, m.lags, m.features,
    );
    spec.output_column = args.output_column;
    spec.out_dir = args.out.join(&args.name);
    m.apply(&mut spec);
    let (outcome, files) = run_experiment(&spec)?;
    println!(
        "{} {}: rmse {:.6} (restart {}), best {:.6} (restart {})",
        spec.name,
        spec.family.name(),
        outcome.rmse(),
        outcome.selected,
        outcome.best_rmse(),
        outcome.best
    );
    println!("report written to {}", files.report.display());
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let saved = SavedModel::load(&args.model)?;
    let column = args
        .output_column
        .as_deref()
        .map_or(OutputColumn::Last, OutputColumn::parse);
    let data = load_csv(&args.data, &column)?;
    let scaled = saved
        .normalization
        .apply(&data)
        .context("normalising the continuation")?;
    let (mean, var) = saved.simulate(&scaled.inputs, worker_count(args.workers))?;
    let norm = &saved.normalization;
    let start = saved.train.len();
    let rows: Vec<TraceRow> = (0..mean.len())
        .map(|k| {
            TraceRow::new(
                start + k,
                data.outputs[k],
                norm.output_inverse(mean[k]),
                norm.output_variance_inverse(var[k]),
            )
        })
        .collect();
    write_trace(&args.out, &rows)?;
    let pred: Vec<f64> = rows.iter().map(|r| r.y_pred).collect();
    println!(
        "rmse {:.6} over {} steps, trace in {}",
        rmse(&pred, &data.outputs)?,
        rows.len(),
        args.out.display()
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let presets: Vec<_> = if args.preset == "all" {
        PRESETS.to_vec()
    } else {
        match preset(&args.preset) {
            Some(p) => vec![p],
            None => bail!(
                "unknown preset {:?}; choose from drive, actuator, damper or all",
                args.preset
            ),
        }
    };
    for p in presets {
        for &family in &args.families {
            let mut spec = p.spec(family, &args.data_dir, &args.out);
            spec.training.seed = args.seed;
            spec.workers = worker_count(args.workers);
            if let Some(i) = args.iters {
                spec.training.total_iters = i;
            }
            if let Some(r) = args.restarts {
                spec.training.restarts = r;
            }
            let (outcome, _) = run_experiment(&spec)?;
            println!(
                "{:<9} {:<9} best-of-{} rmse {:.4}  objective-selected rmse {:.4}",
                p.name,
                family.name(),
                outcome.restarts.len(),
                outcome.best_rmse(),
                outcome.rmse()
            );
        }
    }
    Ok(())
}

fn check(samples: usize) -> Result<()> {
    let lines = run_checks(samples);
    for l in &lines {
        println!(
            "{} {}: {}",
            if l.passed { "PASS" } else { "FAIL" },
            l.name,
            l.detail
        );
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", lines.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
        Command::Check { samples } => check(samples),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
