//! Predictive moments and free simulation with moment propagation.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::engine::{map_partial, partition, reduce_bound, worker_of, Prepared, RangeMap};
use crate::error::{bail, Result};
use crate::linalg::{dot, Matrix};
use crate::psi::{psi_star, Spectrum};
use crate::recurrent::RecurrentPlan;
use crate::types::{Dataset, DrgpModel};

/// Cached optimal weight posterior of one GP layer.
#[derive(Debug, Clone)]
pub struct LayerPredictor {
    pub spec: Spectrum,
    /// Posterior weight mean `A⁻¹Ψ₁ᵀt`.
    pub weight_mean: Vec<f64>,
    /// Posterior weight covariance `σ²A⁻¹`.
    pub weight_cov: Matrix,
    pub noise_var: f64,
}

impl LayerPredictor {
    /// Mean and model variance (without observation noise) at an uncertain input.
    pub fn predict(&self, mean: &[f64], var: &[f64]) -> Result<(f64, f64)> {
        let (psi1, psi2) = psi_star(mean, var, &self.spec)?;
        let mu = dot(&psi1, &self.weight_mean);
        let quad = dot(&psi2.mul_vec(&self.weight_mean)?, &self.weight_mean);
        let trace = self.weight_cov.frobenius_dot(&psi2);
        Ok((mu, quad - mu * mu + trace))
    }
}

/// Where the lagged latent values at the start of a simulation come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Warmup {
    /// The last `H_h` trained latent means and variances of each layer.
    #[default]
    TrainTail,
    /// Mean zero and variance one.
    Cold,
}

/// A trained model with every layer's posterior cached.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub model: DrgpModel,
    pub layers: Vec<LayerPredictor>,
}

impl Predictor {
    /// Caches the optimal weight posteriors for the training series `data`.
    pub fn fit<E: RangeMap>(
        exec: &E,
        workers: usize,
        model: &DrgpModel,
        data: &Dataset,
    ) -> Result<Self> {
        let plan = RecurrentPlan::new(model.config, data.len())?;
        let prep = Prepared::new(model, data, &plan)?;
        let ranges = partition(prep.rows(), workers);
        let partials = exec
            .map(&ranges, |r| map_partial(&prep, worker_of(&ranges, &r), r))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let reduced = reduce_bound(&prep, &partials)?;
        let layers = reduced
            .layers
            .into_iter()
            .zip(prep.layers)
            .map(|(c, p)| {
                let mut cov = c.chol.inverse();
                cov.scale(c.noise_var);
                LayerPredictor {
                    spec: p.spec,
                    weight_mean: c.alpha.column(0),
                    weight_cov: cov,
                    noise_var: c.noise_var,
                }
            })
            .collect();
        Ok(Self {
            model: model.clone(),
            layers,
        })
    }
}

/// Predictions of a free simulation, one entry per simulated step.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimTrace {
    /// `[step][hidden layer]` predictive means.
    pub state_mean: Vec<Vec<f64>>,
    /// `[step][hidden layer]` predictive variances including layer noise.
    pub state_var: Vec<Vec<f64>>,
    pub output_mean: Vec<f64>,
    /// Output variances including observation noise.
    pub output_var: Vec<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.output_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output_mean.is_empty()
    }
}

/// Rolls the model forward over `exo`, feeding back only its own predicted
/// moments. The first `H_x` rows of `exo` are history; one prediction is
/// produced for every later row.
pub fn free_simulate(pred: &Predictor, exo: &Matrix, warmup: Warmup) -> Result<SimTrace> {
    let c = pred.model.config;
    let (hx, hh, big_l) = (c.input_lags, c.state_lags, c.layers);
    if exo.rows() <= hx {
        bail!(
            Config,
            "{} exogenous rows leave nothing to simulate after {hx} history rows",
            exo.rows()
        );
    }
    if exo.cols() != c.exo_dim {
        bail!(
            Dimension,
            "exogenous input has {} columns, model expects {}",
            exo.cols(),
            c.exo_dim
        );
    }
    let mut hist: Vec<VecDeque<(f64, f64)>> = pred
        .model
        .states
        .iter()
        .map(|s| {
            (0..hh)
                .map(|k| match warmup {
                    Warmup::TrainTail => {
                        let i = s.len() - hh + k;
                        (s.mean[i], s.var(i))
                    }
                    Warmup::Cold => (0.0, 1.0),
                })
                .collect()
        })
        .collect();
    // Most recent first.
    let lags = |h: &VecDeque<(f64, f64)>, mean: &mut Vec<f64>, var: &mut Vec<f64>| {
        for &(m, v) in h.iter().rev().take(hh) {
            mean.push(m);
            var.push(v);
        }
    };
    let steps = exo.rows() - hx;
    let mut trace = SimTrace::default();
    let (mut mean, mut var) = (Vec::new(), Vec::new());
    for t in hx..exo.rows() {
        let mut state_mean = Vec::with_capacity(big_l);
        let mut state_var = Vec::with_capacity(big_l);
        for l in 0..=big_l {
            mean.clear();
            var.clear();
            if l < big_l {
                lags(&hist[l], &mut mean, &mut var);
            }
            if l == 0 {
                for k in 1..=hx {
                    for &x in exo.row(t - k) {
                        mean.push(x);
                        var.push(0.0);
                    }
                }
            } else {
                lags(&hist[l - 1], &mut mean, &mut var);
            }
            let layer = &pred.layers[l];
            let (mu, v) = layer.predict(&mean, &var)?;
            let lam = v + layer.noise_var;
            if l < big_l {
                hist[l].push_back((mu, lam));
                if hist[l].len() > hh {
                    hist[l].pop_front();
                }
                state_mean.push(mu);
                state_var.push(lam);
            } else {
                trace.output_mean.push(mu);
                trace.output_var.push(lam);
            }
        }
        trace.state_mean.push(state_mean);
        trace.state_var.push(state_var);
    }
    debug_assert_eq!(trace.len(), steps);
    Ok(trace)
}
