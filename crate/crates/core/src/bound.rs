//! Variational lower bounds.
//!
//! A single GP layer with features `Φ`, weights `a_d ~ q(a_d)` and Gaussian
//! noise admits the bound of [`layer_bound`]. Eliminating `q(a)` analytically
//! gives the collapsed bound of [`optimal_layer_bound`]; with `A = Ψ₂ + σ²I`
//! and `C = Ψ₁ᵀY`, it reads
//!
//! ```text
//! -((N-M)D/2) log σ² - (ND/2) log 2π - tr(YᵀY)/(2σ²) + tr(Cᵀ A⁻¹ C)/(2σ²) - (D/2) log|A|
//! ```
//!
//! which is exactly `log N(Y; 0, ΦΦᵀ + σ²I)` when the inputs are
//! deterministic. The recurrent objective sums one collapsed bound per GP
//! layer and adds the latent-state terms of [`StateTerms`].

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::psi::{block_sum, psi_stats, PsiStats};
use crate::recurrent::RecurrentPlan;
use crate::types::{Dataset, DrgpModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `KL(N(mean, diag var) || N(0, I))`.
pub fn kl_gauss_diag(means: &[f64], vars: &[f64]) -> Result<f64> {
    if means.len() != vars.len() {
        bail!(
            Dimension,
            "{} means and {} variances",
            means.len(),
            vars.len()
        );
    }
    let mut kl = 0.0;
    for (&m, &v) in means.iter().zip(vars) {
        if !(v > 0.0) {
            bail!(Domain, "variance {v} is not positive");
        }
        kl += 0.5 * (v + m * m - 1.0 - libm::log(v));
    }
    Ok(kl)
}

/// Gaussian posterior over the weights of one layer: one mean column per
/// output dimension and a covariance shared across dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPosterior {
    /// `M×D` means.
    pub mean: Matrix,
    /// `M×M` covariance.
    pub cov: Matrix,
}

impl WeightPosterior {
    /// `Σ_d KL(N(m_d, S) || N(0, I))`.
    pub fn kl(&self, layer: usize) -> Result<f64> {
        let (m, d) = self.mean.shape();
        let chol = Cholesky::new(&self.cov, layer)?;
        let mm: f64 = self.mean.as_slice().iter().map(|v| v * v).sum();
        Ok(0.5 * (d as f64 * self.cov.trace() + mm)
            - 0.5 * d as f64 * chol.log_det()
            - 0.5 * (m * d) as f64)
    }
}

fn check_targets(psi: &PsiStats, targets: &Matrix) -> Result<()> {
    if psi.psi1.rows() != targets.rows() {
        bail!(
            Dimension,
            "Ψ₁ has {} rows but there are {} targets",
            psi.psi1.rows(),
            targets.rows()
        );
    }
    let m = psi.psi1.cols();
    if psi.psi2.shape() != (m, m) {
        bail!(Dimension, "Ψ₂ is {:?}, expected {m}x{m}", psi.psi2.shape());
    }
    Ok(())
}

/// Bound for an explicit weight posterior. `kl` collects the divergences
/// subtracted from the data terms, normally [`WeightPosterior::kl`] plus any
/// state or spectral terms owned by the caller.
pub fn layer_bound(
    psi: &PsiStats,
    targets: &Matrix,
    post: &WeightPosterior,
    sigma_noise: f64,
    kl: f64,
) -> Result<f64> {
    check_targets(psi, targets)?;
    if !(sigma_noise > 0.0) {
        bail!(Domain, "noise level must be positive, got {sigma_noise}");
    }
    let (n, d) = targets.shape();
    let s2 = sigma_noise * sigma_noise;
    let yy: f64 = targets.as_slice().iter().map(|v| v * v).sum();
    let fit = targets
        .transpose()
        .matmul(&psi.psi1)?
        .matmul(&post.mean)?
        .trace();
    let second = post.cov.matmul(&psi.psi2)?.trace() * d as f64
        + post
            .mean
            .transpose()
            .matmul(&psi.psi2)?
            .matmul(&post.mean)?
            .trace();
    Ok(
        -0.5 * (n * d) as f64 * (LN_2PI + libm::log(s2)) - yy / (2.0 * s2) + fit / s2
            - second / (2.0 * s2)
            - kl,
    )
}

/// Sample sums that the collapsed bound depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapsedTerms {
    pub psi2: Matrix,
    /// `Ψ₁ᵀY`, `M×D`.
    pub proj: Matrix,
    /// `tr(YᵀY)`.
    pub yty: f64,
    pub rows: usize,
}

impl CollapsedTerms {
    /// Sums over samples in the fixed block order shared with the engine.
    pub fn from_psi(psi: &PsiStats, targets: &Matrix) -> Result<Self> {
        check_targets(psi, targets)?;
        let (n, d) = targets.shape();
        let m = psi.psi1.cols();
        let proj = block_sum(n, m * d, |i, acc| {
            project_row(psi.psi1.row(i), targets.row(i), acc)
        });
        let yty = block_sum(n, 1, |i, acc| {
            acc[0] += targets.row(i).iter().map(|v| v * v).sum::<f64>()
        })[0];
        Ok(Self {
            psi2: psi.psi2.clone(),
            proj: Matrix::from_vec(m, d, proj)?,
            yty,
            rows: n,
        })
    }
}

/// `acc += ψᵀ y` for one sample, `acc` laid out `M×D`.
#[inline]
pub(crate) fn project_row(psi1: &[f64], y: &[f64], acc: &mut [f64]) {
    let d = y.len();
    for (m, p) in psi1.iter().enumerate() {
        for (k, yk) in y.iter().enumerate() {
            acc[m * d + k] += p * yk;
        }
    }
}

/// Factorised collapsed bound of one layer.
#[derive(Debug, Clone)]
pub struct Collapsed {
    pub value: f64,
    pub chol: Cholesky,
    /// `A⁻¹ Ψ₁ᵀY`, `M×D`.
    pub alpha: Matrix,
    pub noise_var: f64,
}

/// Evaluates the collapsed bound from its sufficient statistics.
pub fn collapsed_bound(
    terms: &CollapsedTerms,
    sigma_noise: f64,
    layer: usize,
) -> Result<Collapsed> {
    if !(sigma_noise > 0.0) {
        bail!(
            Domain,
            "noise level of layer {layer} must be positive, got {sigma_noise}"
        );
    }
    let m = terms.psi2.rows();
    let d = terms.proj.cols();
    let s2 = sigma_noise * sigma_noise;
    let mut a = terms.psi2.clone();
    a.add_diagonal(s2);
    let chol = Cholesky::new(&a, layer)?;
    let mut alpha = Matrix::zeros(m, d);
    let mut quad = 0.0;
    for k in 0..d {
        let c = terms.proj.column(k);
        let sol = chol.solve(&c);
        quad += c.iter().zip(&sol).map(|(x, y)| x * y).sum::<f64>();
        for i in 0..m {
            alpha[(i, k)] = sol[i];
        }
    }
    let (n, d) = (terms.rows as f64, d as f64);
    let value =
        -0.5 * (n - m as f64) * d * libm::log(s2) - 0.5 * n * d * LN_2PI - terms.yty / (2.0 * s2)
            + quad / (2.0 * s2)
            - 0.5 * d * chol.log_det();
    Ok(Collapsed {
        value,
        chol,
        alpha,
        noise_var: s2,
    })
}

/// Collapsed bound with the weight posterior at its optimum.
pub fn optimal_layer_bound(psi: &PsiStats, targets: &Matrix, sigma_noise: f64) -> Result<f64> {
    Ok(collapsed_bound(&CollapsedTerms::from_psi(psi, targets)?, sigma_noise, 0)?.value)
}

/// The optimal weight posterior: mean `A⁻¹Ψ₁ᵀY`, covariance `σ²A⁻¹`.
pub fn optimal_weight_posterior(
    psi: &PsiStats,
    targets: &Matrix,
    sigma_noise: f64,
) -> Result<WeightPosterior> {
    let c = collapsed_bound(&CollapsedTerms::from_psi(psi, targets)?, sigma_noise, 0)?;
    let mut cov = c.chol.inverse();
    cov.scale(c.noise_var);
    Ok(WeightPosterior { mean: c.alpha, cov })
}

/// Objective value broken into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub total: f64,
    /// Collapsed bound of each GP layer.
    pub per_layer: Vec<f64>,
    /// `-Σ λ_i / (2σ²)` over the latent targets of every hidden layer.
    pub state_correction: f64,
    /// Entropy of the latent entries that are regression targets.
    pub state_entropy: f64,
    /// KL of the initial latent entries against `N(0, 1)`.
    pub kl_states: f64,
    /// KL of the spectral point posteriors, variational variant only.
    pub kl_omega: f64,
}

impl BoundReport {
    pub fn from_parts(per_layer: Vec<f64>, states: StateTerms, kl_omega: f64) -> Self {
        let total = per_layer.iter().sum::<f64>() + states.correction + states.entropy
            - states.kl_initial
            - kl_omega;
        Self {
            total,
            per_layer,
            state_correction: states.correction,
            state_entropy: states.entropy,
            kl_states: states.kl_initial,
            kl_omega,
        }
    }

    /// Sum of the parts, recomputed.
    pub fn sum_of_parts(&self) -> f64 {
        self.per_layer.iter().sum::<f64>() + self.state_correction + self.state_entropy
            - self.kl_states
            - self.kl_omega
    }
}

/// Latent-state contributions to the recurrent objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateTerms {
    pub correction: f64,
    pub entropy: f64,
    pub kl_initial: f64,
}

/// Latent-state terms of the objective.
pub fn state_terms(model: &DrgpModel, plan: &RecurrentPlan) -> StateTerms {
    let mut t = StateTerms::default();
    let h0 = plan.initial_states();
    for (l, state) in model.states.iter().enumerate() {
        let s2 = {
            let s = model.layers[l].hyper.sigma_noise();
            s * s
        };
        for (i, (&mu, lam)) in state.mean.iter().zip(state.variances()).enumerate() {
            if i < h0 {
                t.kl_initial += 0.5 * (lam + mu * mu - 1.0 - libm::log(lam));
            } else {
                t.entropy += 0.5 * (LN_2PI + libm::log(lam)) + 0.5;
                t.correction -= lam / (2.0 * s2);
            }
        }
    }
    t
}

/// KL of every layer's spectral point posterior against `N(0, I)`.
pub fn kl_omega(model: &DrgpModel) -> Result<f64> {
    let mut kl = 0.0;
    for layer in &model.layers {
        if let Some(var) = layer.basis.variances() {
            kl += kl_gauss_diag(layer.basis.freq.as_slice(), var.as_slice())?;
        }
    }
    Ok(kl)
}

/// The recurrent objective evaluated layer by layer from batch statistics.
pub fn revarb_objective(model: &DrgpModel, data: &Dataset) -> Result<BoundReport> {
    model.validate(data.len())?;
    let plan = RecurrentPlan::new(model.config, data.len())?;
    let mut per_layer = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let (mean, var) = plan.layer_inputs(l, model, data);
        let psi = psi_stats(&mean, &var, &layer.basis, &layer.hyper, false)?;
        let t = plan.layer_targets(l, model, data);
        let y = Matrix::from_vec(t.len(), 1, t)?;
        let terms = CollapsedTerms::from_psi(&psi, &y)?;
        per_layer.push(collapsed_bound(&terms, layer.hyper.sigma_noise(), l)?.value);
    }
    Ok(BoundReport::from_parts(
        per_layer,
        state_terms(model, &plan),
        kl_omega(model)?,
    ))
}

/// Ψ statistics of every GP layer for the model's current state.
pub fn layer_stats(
    model: &DrgpModel,
    data: &Dataset,
    keep_per_sample: bool,
) -> Result<Vec<PsiStats>> {
    let plan = RecurrentPlan::new(model.config, data.len())?;
    model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let (mean, var) = plan.layer_inputs(l, model, data);
            psi_stats(&mean, &var, &layer.basis, &layer.hyper, keep_per_sample)
        })
        .collect()
}
