//! A single train-and-simulate run: split, normalise on the training part,
//! fit every restart, free-simulate the test part and write the results.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use drgp_core::data::{rmse, Normalization, ScaleMode};
use drgp_core::narx::{
    build_narx, fit_gp_full_narx, fit_gp_ss_narx, simulate_narx, FullGpNarx, SsgpNarx,
};
use drgp_core::predictor::{free_simulate, Predictor, Warmup};
use drgp_core::trainer::{
    initialize, train_from, BoundObjective, HistoryRecord, Selection, TrainConfig,
};
use drgp_core::transform::positive;
use drgp_core::{Dataset, DrgpModel, Matrix, ModelConfig, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{load_csv, OutputColumn};
use crate::report::{write_trace, Report, TraceRow};
use crate::Parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    DrgpSs,
    DrgpVss,
    GpSs,
    GpFull,
}

impl Family {
    pub fn variant(self) -> Option<Variant> {
        match self {
            Family::DrgpSs => Some(Variant::Ss),
            Family::DrgpVss => Some(Variant::Vss),
            Family::GpSs | Family::GpFull => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::DrgpSs => "drgp-ss",
            Family::DrgpVss => "drgp-vss",
            Family::GpSs => "gp-ss",
            Family::GpFull => "gp-full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Split,
    Normalize,
    Train,
    Simulate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Split => "split",
            Stage::Normalize => "normalize",
            Stage::Train => "train",
            Stage::Simulate => "simulate",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

/// A failure tagged with the stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(self.source.as_ref())
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub data: PathBuf,
    /// Output column by name or index; the last column when absent.
    pub output_column: Option<String>,
    /// Leading rows used for training.
    pub train_rows: usize,
    /// Rows right after the training part used for free simulation.
    pub test_rows: usize,
    pub family: Family,
    /// Structure of the recurrent model; `input_lags` is also the NARX lag.
    pub model: ModelConfig,
    pub training: TrainConfig,
    /// Spectral features of the GP-SS baseline.
    pub narx_features: usize,
    pub narx_iters: usize,
    pub scale: ScaleMode,
    /// Report errors on the normalised scale instead of the original one.
    pub report_normalized: bool,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    /// A spec with the default training schedule.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        data: impl Into<PathBuf>,
        train_rows: usize,
        test_rows: usize,
        family: Family,
        layers: usize,
        lags: usize,
        features: usize,
    ) -> Self {
        let variant = family.variant().unwrap_or(Variant::Ss);
        Self {
            name: name.to_owned(),
            data: data.into(),
            output_column: None,
            train_rows,
            test_rows,
            family,
            model: ModelConfig::new(layers, lags, features, variant, 1),
            training: TrainConfig::new(variant),
            narx_features: features,
            narx_iters: 200,
            scale: ScaleMode::StdDev,
            report_normalized: false,
            workers: 1,
            out_dir: PathBuf::from("runs").join(name),
        }
    }

    fn output_column(&self) -> OutputColumn {
        self.output_column
            .as_deref()
            .map_or(OutputColumn::Last, OutputColumn::parse)
    }
}

/// A fitted model of any family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fitted {
    Drgp { model: DrgpModel },
    GpSs { model: SsgpNarx },
    GpFull { model: FullGpNarx },
}

/// A fitted model together with the data needed to continue simulating
/// after the end of its training series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub family: Family,
    pub lags: usize,
    pub normalization: Normalization,
    /// Normalised training series.
    pub train: Dataset,
    pub fitted: Fitted,
}

impl SavedModel {
    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Free simulation over normalised inputs that directly follow the
    /// training series. Returns normalised means and variances.
    pub fn simulate(
        &self,
        inputs: &Matrix,
        workers: usize,
    ) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
        let h = self.lags;
        let n = self.train.len();
        if n < h {
            bail!("training series of {n} rows is shorter than the lag {h}");
        }
        let q = self.train.input_dim();
        if inputs.cols() != q {
            bail!(
                "continuation has {} input columns, the model was trained on {q}",
                inputs.cols()
            );
        }
        let exo = Matrix::from_fn(h + inputs.rows(), q, |i, j| {
            if i < h {
                self.train.inputs[(n - h + i, j)]
            } else {
                inputs[(i - h, j)]
            }
        });
        match &self.fitted {
            Fitted::Drgp { model } => {
                let pred = Predictor::fit(&Parallel, workers, model, &self.train)?;
                let trace = free_simulate(&pred, &exo, Warmup::TrainTail)?;
                Ok((trace.output_mean, trace.output_var))
            }
            Fitted::GpSs { model } => {
                let mean = simulate_narx(model, h, h, &self.train.outputs, &exo)?;
                let s = model.layer.hyper.sigma_noise();
                Ok((mean.clone(), vec![s * s; mean.len()]))
            }
            Fitted::GpFull { model } => {
                let mean = simulate_narx(model, h, h, &self.train.outputs, &exo)?;
                let s = positive(model.raw[1]);
                Ok((mean.clone(), vec![s * s; mean.len()]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary {
    pub seed: u64,
    pub objective: f64,
    pub rmse: f64,
    pub iterations: usize,
    pub termination: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub restarts: Vec<RestartSummary>,
    /// Restart chosen by the selection rule.
    pub selected: usize,
    /// Restart with the lowest test error.
    pub best: usize,
    pub trace: Vec<TraceRow>,
    pub saved: SavedModel,
    pub histories: Vec<Vec<HistoryRecord>>,
    pub report: Report,
}

impl ExperimentOutcome {
    pub fn rmse(&self) -> f64 {
        self.restarts[self.selected].rmse
    }

    pub fn best_rmse(&self) -> f64 {
        self.restarts[self.best].rmse
    }
}

struct Restart {
    fitted: Fitted,
    objective: f64,
    iterations: usize,
    termination: String,
    history: Vec<HistoryRecord>,
}

fn fit_restart(
    spec: &ExperimentSpec,
    config: ModelConfig,
    train: &Dataset,
    seed: u64,
    workers: usize,
) -> anyhow::Result<Restart> {
    let h = spec.model.input_lags;
    match spec.family {
        Family::DrgpSs | Family::DrgpVss => {
            let model = initialize(config, train, &spec.training, seed)?;
            let mut objective = BoundObjective::new(&Parallel, workers, config, train)?;
            let start = Instant::now();
            let clock = || start.elapsed().as_secs_f64();
            let out = train_from(model, &mut objective, &spec.training, Some(&clock))?;
            Ok(Restart {
                iterations: out.history.last().map_or(0, |r| r.iteration),
                termination: format!("{:?}", out.termination),
                objective: out.objective,
                history: out.history,
                fitted: Fitted::Drgp { model: out.model },
            })
        }
        Family::GpSs => {
            let design = build_narx(train, h, h)?;
            let model = fit_gp_ss_narx(&design, spec.narx_features, seed, spec.narx_iters)?;
            Ok(Restart {
                objective: model.log_marginal,
                iterations: spec.narx_iters,
                termination: "MaxIterations".into(),
                history: Vec::new(),
                fitted: Fitted::GpSs { model },
            })
        }
        Family::GpFull => {
            let design = build_narx(train, h, h)?;
            let model = fit_gp_full_narx(&design, spec.narx_iters)?;
            Ok(Restart {
                objective: model.log_marginal,
                iterations: spec.narx_iters,
                termination: "MaxIterations".into(),
                history: Vec::new(),
                fitted: Fitted::GpFull { model },
            })
        }
    }
}

/// Runs a spec on an already loaded dataset without touching the disk.
pub fn run_on(spec: &ExperimentSpec, data: &Dataset) -> Result<ExperimentOutcome, StageError> {
    let total = spec.train_rows + spec.test_rows;
    if spec.test_rows == 0 || total > data.len() {
        return Err(anyhow!(
            "split {}+{} does not fit {} rows",
            spec.train_rows,
            spec.test_rows,
            data.len()
        ))
        .at(Stage::Split);
    }
    if spec.train_rows <= spec.model.input_lags {
        return Err(anyhow!(
            "{} training rows leave nothing after lag {}",
            spec.train_rows,
            spec.model.input_lags
        ))
        .at(Stage::Split);
    }
    let train_raw = data.slice(0..spec.train_rows).at(Stage::Split)?;
    let test_raw = data.slice(spec.train_rows..total).at(Stage::Split)?;
    let norm = Normalization::fit(&train_raw, spec.scale).at(Stage::Normalize)?;
    let train = norm.apply(&train_raw).at(Stage::Normalize)?;
    let test = norm.apply(&test_raw).at(Stage::Normalize)?;

    let mut config = spec.model;
    config.exo_dim = data.input_dim();
    if let Some(v) = spec.family.variant() {
        config.variant = v;
        if spec.training.variant != v {
            return Err(anyhow!(
                "training variant {:?} does not match family {}",
                spec.training.variant,
                spec.family.name()
            ))
            .at(Stage::Train);
        }
    }
    let workers = spec.workers.max(1);
    let restarts = if spec.family == Family::GpFull {
        1
    } else {
        spec.training.restarts
    };
    let started = Instant::now();

    let runs: Vec<(Restart, f64)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let t = Instant::now();
            let out = fit_restart(spec, config, &train, spec.training.restart_seed(r), workers);
            out.map(|o| (o, t.elapsed().as_secs_f64()))
        })
        .collect::<anyhow::Result<_>>()
        .at(Stage::Train)?;

    let truth: Vec<f64> = if spec.report_normalized {
        test.outputs.clone()
    } else {
        test_raw.outputs.clone()
    };
    let mut summaries = Vec::with_capacity(restarts);
    let mut traces = Vec::with_capacity(restarts);
    let mut saved_models = Vec::with_capacity(restarts);
    let mut histories = Vec::with_capacity(restarts);
    for (r, (run, seconds)) in runs.into_iter().enumerate() {
        let saved = SavedModel {
            family: spec.family,
            lags: spec.model.input_lags,
            normalization: norm.clone(),
            train: train.clone(),
            fitted: run.fitted,
        };
        let (mean, var) = saved.simulate(&test.inputs, workers).at(Stage::Simulate)?;
        let rows: Vec<TraceRow> = (0..mean.len())
            .map(|k| {
                let (m, v) = if spec.report_normalized {
                    (mean[k], var[k])
                } else {
                    (
                        norm.output_inverse(mean[k]),
                        norm.output_variance_inverse(var[k]),
                    )
                };
                TraceRow::new(spec.train_rows + k, truth[k], m, v)
            })
            .collect();
        let pred: Vec<f64> = rows.iter().map(|t| t.y_pred).collect();
        let err = rmse(&pred, &truth).at(Stage::Simulate)?;
        summaries.push(RestartSummary {
            seed: spec.training.restart_seed(r),
            objective: run.objective,
            rmse: err,
            iterations: run.iterations,
            termination: run.termination,
            seconds,
        });
        traces.push(rows);
        saved_models.push(saved);
        histories.push(run.history);
    }

    let best = argmin(summaries.iter().map(|s| s.rmse));
    let selected = match spec.training.selection {
        Selection::Objective => argmin(summaries.iter().map(|s| -s.objective)),
        Selection::Validation => best,
    };
    let report = build_report(
        spec,
        data,
        &norm,
        &summaries,
        selected,
        best,
        started.elapsed().as_secs_f64(),
    )
    .at(Stage::Write)?;
    Ok(ExperimentOutcome {
        trace: traces.swap_remove(selected),
        saved: saved_models.swap_remove(selected),
        restarts: summaries,
        selected,
        best,
        histories,
        report,
    })
}

/// Index of the smallest value, treating NaN as worst.
fn argmin(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .min_by(|a, b| {
            let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
            key(a.1).total_cmp(&key(b.1))
        })
        .map_or(0, |(i, _)| i)
}

fn build_report(
    spec: &ExperimentSpec,
    data: &Dataset,
    norm: &Normalization,
    runs: &[RestartSummary],
    selected: usize,
    best: usize,
    seconds: f64,
) -> anyhow::Result<Report> {
    let mut r = Report::new();
    r.push("name", &spec.name);
    r.push("family", spec.family.name());
    r.push("version", env!("CARGO_PKG_VERSION"));
    r.push("rows.total", data.len());
    r.push("rows.train", spec.train_rows);
    r.push("rows.test", spec.test_rows);
    r.push(
        "scale",
        if spec.report_normalized {
            "normalized"
        } else {
            "original"
        },
    );
    r.push("rmse", runs[selected].rmse);
    r.push("rmse.best", runs[best].rmse);
    r.push("restart.selected", selected);
    r.push("restart.best", best);
    for (i, s) in runs.iter().enumerate() {
        r.push(format!("restart.{i}.seed"), s.seed);
        r.push(format!("restart.{i}.objective"), s.objective);
        r.push(format!("restart.{i}.rmse"), s.rmse);
        r.push(format!("restart.{i}.iterations"), s.iterations);
        r.push(format!("restart.{i}.termination"), &s.termination);
    }
    for (j, (m, s)) in norm.mean.iter().zip(&norm.scale).enumerate() {
        r.push(format!("normalization.{j}.mean"), m);
        r.push(format!("normalization.{j}.scale"), s);
    }
    r.push_json("config", &serde_json::to_value(spec)?);
    for (i, s) in runs.iter().enumerate() {
        r.push(format!("time.restart.{i}"), s.seconds);
    }
    r.push("time.total", seconds);
    Ok(r)
}

/// Paths of the files a run writes.
#[derive(Debug, Clone)]
pub struct OutputFiles {
    pub report: PathBuf,
    pub predictions: PathBuf,
    pub model: PathBuf,
    pub history: PathBuf,
}

impl OutputFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            report: dir.join("report.txt"),
            predictions: dir.join("predictions.csv"),
            model: dir.join("model.json"),
            history: dir.join("history.csv"),
        }
    }
}

/// Writes the report, the prediction trace, the selected model and the
/// optimisation histories of every restart.
pub fn write_outputs(dir: &Path, outcome: &ExperimentOutcome) -> anyhow::Result<OutputFiles> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = OutputFiles::in_dir(dir);
    outcome.report.write(&files.report)?;
    write_trace(&files.predictions, &outcome.trace)?;
    outcome.saved.save(&files.model)?;
    let mut w = csv::Writer::from_path(&files.history)?;
    w.write_record([
        "restart",
        "iteration",
        "phase",
        "objective",
        "grad_norm",
        "evaluations",
        "elapsed",
    ])?;
    for (r, hist) in outcome.histories.iter().enumerate() {
        for h in hist {
            w.write_record([
                r.to_string(),
                h.iteration.to_string(),
                h.phase.to_string(),
                h.objective.to_string(),
                h.grad_norm.to_string(),
                h.evaluations.to_string(),
                h.elapsed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(files)
}

/// Loads the data named in the spec, runs it and writes every output file.
pub fn run_experiment(
    spec: &ExperimentSpec,
) -> Result<(ExperimentOutcome, OutputFiles), StageError> {
    let data = load_csv(&spec.data, &spec.output_column()).at(Stage::Load)?;
    let outcome = run_on(spec, &data)?;
    let files = write_outputs(&spec.out_dir, &outcome).at(Stage::Write)?;
    Ok((outcome, files))
}
