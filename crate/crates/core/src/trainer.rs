//! Initialisation and staged optimisation of the recurrent objective.

use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{evaluate, RangeMap};
use crate::error::{bail, Error, Result};
use crate::features::{init_basis, PseudoInit};
use crate::lbfgs::{minimize, LbfgsConfig, Termination};
use crate::linalg::Matrix;
use crate::params::{GroupKey, ParamGroup, ParamLayout};
use crate::recurrent::RecurrentPlan;
use crate::types::{
    Dataset, DrgpModel, Hyperparams, LatentState, LayerParams, ModelConfig, Variant,
};

/// How initial lengthscales are derived from the range of a window column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LengthscaleRule {
    #[default]
    SqrtRange,
    Range,
}

/// How the best of several restarts is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Selection {
    /// Highest final objective.
    #[default]
    Objective,
    /// Lowest free-simulation error on a held-out split supplied by the caller.
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// Iterations with the freeze set excluded.
    pub phase_one_iters: usize,
    /// Total iterations across both phases.
    pub total_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Keep noise and signal amplitudes fixed during phase one.
    pub freeze_sigmas: bool,
    /// Also keep spectral points and pseudo-inputs fixed during phase one.
    pub freeze_basis: bool,
    pub lengthscale_rule: LengthscaleRule,
    pub pseudo_init: PseudoInit,
    pub variant: Variant,
    /// Initial spectral point variance of the variational variant.
    pub beta_init: f64,
    /// Keep spectral point variances fixed for the whole run.
    pub freeze_beta: bool,
    /// Keep phases fixed for the whole run.
    pub freeze_phase: bool,
    pub state_var_init: f64,
    pub sigma_noise_init: f64,
    pub sigma_power_init: f64,
    pub selection: Selection,
    pub memory: usize,
    pub grad_tol: f64,
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        let vss = variant == Variant::Vss;
        Self {
            phase_one_iters: 15,
            total_iters: 75,
            restarts: 5,
            seed: 0,
            freeze_sigmas: true,
            freeze_basis: false,
            lengthscale_rule: LengthscaleRule::SqrtRange,
            pseudo_init: PseudoInit::SubsetOfInputs,
            variant,
            beta_init: 1e-3,
            freeze_beta: vss,
            freeze_phase: vss,
            state_var_init: 0.5,
            sigma_noise_init: 0.1,
            sigma_power_init: 1.0,
            selection: Selection::Objective,
            memory: 10,
            grad_tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phase_one_iters >= self.total_iters {
            bail!(
                Config,
                "phase one ({}) must be shorter than the run ({})",
                self.phase_one_iters,
                self.total_iters
            );
        }
        if self.restarts == 0 {
            bail!(Config, "at least one restart is required");
        }
        Ok(())
    }

    /// Groups excluded for the whole run.
    pub fn always_frozen(&self, key: GroupKey) -> bool {
        (self.freeze_beta && key.group == ParamGroup::FrequencyVar)
            || (self.freeze_phase && key.group == ParamGroup::Phase)
    }

    /// Groups excluded during phase one.
    pub fn phase_one_frozen(&self, key: GroupKey) -> bool {
        use ParamGroup::*;
        self.always_frozen(key)
            || (self.freeze_sigmas && matches!(key.group, SigmaPower | SigmaNoise))
            || (self.freeze_basis && matches!(key.group, Frequency | Pseudo))
    }

    /// Seed of restart `r`.
    pub fn restart_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }
}

/// Initial model: latent means copy the outputs, lengthscales follow the
/// spread of each window column, bases are freshly sampled.
pub fn initialize(
    config: ModelConfig,
    data: &Dataset,
    tc: &TrainConfig,
    seed: u64,
) -> Result<DrgpModel> {
    if data.is_empty() {
        bail!(Config, "cannot initialise from an empty dataset");
    }
    if config.variant != tc.variant {
        bail!(
            Config,
            "model and training configuration disagree on the variant"
        );
    }
    let plan = RecurrentPlan::new(config, data.len())?;
    let len = config.state_len(data.len());
    // Entry j sits at time j + H_x - H_h; entries before the series start at the prior mean.
    let mean: Vec<f64> = (0..len)
        .map(|j| {
            (j + config.input_lags)
                .checked_sub(config.state_lags)
                .map_or(0.0, |t| data.outputs[t])
        })
        .collect();
    let states = (0..config.layers)
        .map(|_| LatentState::new(mean.clone(), &vec![tc.state_var_init; len]))
        .collect::<Result<Vec<_>>>()?;
    let mut model = DrgpModel {
        config,
        layers: Vec::new(),
        states,
    };
    for l in 0..config.gp_layers() {
        let (mean, _) = plan.layer_inputs(l, &model, data);
        let ls: Vec<f64> = (0..mean.cols())
            .map(|j| {
                let col = mean.column(j);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let range = hi - lo;
                if range > 0.0 {
                    match tc.lengthscale_rule {
                        LengthscaleRule::SqrtRange => libm::sqrt(range),
                        LengthscaleRule::Range => range,
                    }
                } else {
                    1.0
                }
            })
            .collect();
        let hyper = Hyperparams::new(tc.sigma_power_init, tc.sigma_noise_init, &ls)?;
        let layer_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(l as u64);
        let mut basis = init_basis(
            config.features,
            mean.cols(),
            layer_seed,
            tc.pseudo_init,
            Some(&mean),
        )?;
        if config.variant == Variant::Vss {
            let var = Matrix::from_fn(config.features, mean.cols(), |_, _| tc.beta_init);
            basis = basis.with_variances(&var)?;
        }
        model.layers.push(LayerParams { hyper, basis });
    }
    model.validate(data.len())?;
    Ok(model)
}

/// Anything the trainer can maximise over a model's parameters.
pub trait Objective {
    /// Objective value and, when requested, its gradient laid out by
    /// [`ParamLayout::full`].
    fn evaluate(&mut self, model: &DrgpModel, gradient: bool) -> Result<(f64, Option<Vec<f64>>)>;
}

/// The recurrent bound evaluated through a [`RangeMap`].
pub struct BoundObjective<'a, E> {
    pub exec: &'a E,
    pub workers: usize,
    pub data: &'a Dataset,
    pub plan: RecurrentPlan,
}

impl<'a, E: RangeMap> BoundObjective<'a, E> {
    pub fn new(
        exec: &'a E,
        workers: usize,
        config: ModelConfig,
        data: &'a Dataset,
    ) -> Result<Self> {
        Ok(Self {
            exec,
            workers,
            data,
            plan: RecurrentPlan::new(config, data.len())?,
        })
    }
}

impl<E: RangeMap> Objective for BoundObjective<'_, E> {
    fn evaluate(&mut self, model: &DrgpModel, gradient: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let e = evaluate(
            self.exec,
            self.workers,
            model,
            self.data,
            &self.plan,
            gradient,
        )?;
        if !e.report.total.is_finite() {
            return Err(Error::NonFinite(alloc::format!("{:?}", e.report)));
        }
        Ok((e.report.total, e.gradient))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HistoryRecord {
    pub iteration: usize,
    pub phase: u8,
    pub objective: f64,
    pub grad_norm: f64,
    pub evaluations: usize,
    /// Seconds since the start of the run, if a clock was supplied.
    pub elapsed: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DrgpModel,
    pub history: Vec<HistoryRecord>,
    pub objective: f64,
    pub termination: Termination,
}

/// Runs both phases from `model`. `clock` returns seconds on any fixed origin.
pub fn train_from<O: Objective>(
    mut model: DrgpModel,
    objective: &mut O,
    tc: &TrainConfig,
    clock: Option<&dyn Fn() -> f64>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    let full = ParamLayout::full(&model);
    let (initial, _) = objective.evaluate(&model, false)?;
    if !initial.is_finite() {
        return Err(Error::NonFinite(alloc::format!(
            "initial objective is {initial}"
        )));
    }
    let t0 = clock.map_or(0.0, |c| c());
    let mut history = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut done = 0usize;
    let phases: [(u8, usize, ParamLayout); 2] = [
        (
            1,
            tc.phase_one_iters,
            ParamLayout::excluding(&model, |k| tc.phase_one_frozen(k)),
        ),
        (
            2,
            tc.total_iters - tc.phase_one_iters,
            ParamLayout::excluding(&model, |k| tc.always_frozen(k)),
        ),
    ];
    let mut objective_value = initial;
    for (phase, iters, layout) in phases {
        if iters == 0 || layout.is_empty() {
            continue;
        }
        let x0 = layout.flatten(&model)?;
        let mut work = model.clone();
        let cfg = LbfgsConfig {
            memory: tc.memory,
            max_iters: iters,
            grad_tol: tc.grad_tol,
            ..LbfgsConfig::default()
        };
        let mut failure: Option<Error> = None;
        let offset = done;
        let skip_first = phase > 1;
        let outcome = minimize(
            |x| {
                layout.unflatten(&mut work, x).ok()?;
                match objective.evaluate(&work, true) {
                    Ok((v, Some(g))) => {
                        let g = layout.restrict(&full, &g).ok()?;
                        Some((-v, g.into_iter().map(|e| -e).collect()))
                    }
                    Ok((_, None)) => None,
                    Err(e @ Error::Dimension(_)) | Err(e @ Error::Config(_)) => {
                        failure = Some(e);
                        None
                    }
                    Err(_) => None,
                }
            },
            x0,
            &cfg,
            |s| {
                if skip_first && s.iteration == 0 {
                    return;
                }
                history.push(HistoryRecord {
                    iteration: offset + s.iteration,
                    phase,
                    objective: -s.value,
                    grad_norm: s.grad_norm,
                    evaluations: s.evaluations,
                    elapsed: clock.map_or(0.0, |c| c() - t0),
                });
            },
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let Some(out) = outcome else {
            return Err(Error::NonFinite(alloc::format!(
                "objective could not be evaluated at the start of phase {phase}"
            )));
        };
        layout.unflatten(&mut model, &out.x)?;
        objective_value = -out.value;
        done += out.iterations;
        termination = out.termination;
    }
    Ok(TrainOutcome {
        model,
        history,
        objective: objective_value,
        termination,
    })
}

/// Index of the best restart under [`Selection::Objective`].
pub fn best_by_objective(outcomes: &[TrainOutcome]) -> Option<usize> {
    outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.objective.is_finite())
        .max_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(i, _)| i)
}

/// Initialises and trains every restart one after another, returning all
/// outcomes in restart order.
pub fn train_restarts<E: RangeMap>(
    exec: &E,
    workers: usize,
    config: ModelConfig,
    data: &Dataset,
    tc: &TrainConfig,
) -> Result<Vec<TrainOutcome>> {
    (0..tc.restarts)
        .map(|r| {
            let model = initialize(config, data, tc, tc.restart_seed(r))?;
            let mut obj = BoundObjective::new(exec, workers, config, data)?;
            train_from(model, &mut obj, tc, None)
        })
        .collect()
}
