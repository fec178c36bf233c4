//! Lagged-regressor baselines.
//!
//! Row `i` of a design concatenates `y_{i-1} … y_{i-H_y}` and
//! `x_{i-1} … x_{i-H_x}` and targets `y_i`. Two regressors are fitted on it:
//! a sparse spectrum GP maximising its exact marginal likelihood and a full
//! GP with a squared exponential kernel.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::bound::{collapsed_bound, CollapsedTerms};
use crate::error::{bail, Result};
use crate::features::{init_basis, PseudoInit};
use crate::lbfgs::{minimize, LbfgsConfig};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::psi::{Spectrum, SpectrumGrad};
use crate::transform::{inverse_transform, positive, positive_derivative};
use crate::types::{Dataset, Hyperparams, LayerParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NarxDesign {
    pub regressors: Matrix,
    pub targets: Vec<f64>,
    pub output_lags: usize,
    pub input_lags: usize,
    pub exo_dim: usize,
}

/// Builds the lagged design of a series.
pub fn build_narx(data: &Dataset, output_lags: usize, input_lags: usize) -> Result<NarxDesign> {
    let start = output_lags.max(input_lags);
    let n = data.len();
    if n <= start {
        bail!(
            Config,
            "series of length {n} is too short for lags ({output_lags}, {input_lags})"
        );
    }
    let q = data.input_dim();
    let width = output_lags + q * input_lags;
    if width == 0 {
        bail!(Config, "design has no regressors");
    }
    let regressors = Matrix::from_fn(n - start, width, |r, c| {
        let i = r + start;
        if c < output_lags {
            data.outputs[i - 1 - c]
        } else {
            let c = c - output_lags;
            data.inputs[(i - 1 - c / q, c % q)]
        }
    });
    Ok(NarxDesign {
        regressors,
        targets: data.outputs[start..].to_vec(),
        output_lags,
        input_lags,
        exo_dim: q,
    })
}

/// A one-step regressor on lagged rows.
pub trait NarxRegressor {
    fn predict_mean(&self, row: &[f64]) -> Result<f64>;
}

/// Free simulation feeding predicted means back into the output lags.
///
/// `past_outputs` supplies at least `H_y` outputs preceding the simulation
/// (most recent last); the first `H_x` rows of `exo` are history.
pub fn simulate_narx<R: NarxRegressor>(
    model: &R,
    output_lags: usize,
    input_lags: usize,
    past_outputs: &[f64],
    exo: &Matrix,
) -> Result<Vec<f64>> {
    if past_outputs.len() < output_lags {
        bail!(
            Config,
            "{} past outputs for {output_lags} output lags",
            past_outputs.len()
        );
    }
    if exo.rows() <= input_lags {
        bail!(
            Config,
            "{} exogenous rows leave nothing to simulate",
            exo.rows()
        );
    }
    let mut ys: VecDeque<f64> = past_outputs[past_outputs.len() - output_lags..]
        .iter()
        .copied()
        .collect();
    let mut out = Vec::with_capacity(exo.rows() - input_lags);
    let mut row = Vec::with_capacity(output_lags + input_lags * exo.cols());
    for t in input_lags..exo.rows() {
        row.clear();
        row.extend(ys.iter().rev());
        for k in 1..=input_lags {
            row.extend_from_slice(exo.row(t - k));
        }
        let y = model.predict_mean(&row)?;
        out.push(y);
        if output_lags > 0 {
            ys.pop_front();
            ys.push_back(y);
        }
    }
    Ok(out)
}

fn column_lengthscales(x: &Matrix) -> Vec<f64> {
    (0..x.cols())
        .map(|j| {
            let col = x.column(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                libm::sqrt(hi - lo)
            } else {
                1.0
            }
        })
        .collect()
}

/// Sparse spectrum GP on a fixed design.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SsgpNarx {
    pub layer: LayerParams,
    pub weight_mean: Vec<f64>,
    pub log_marginal: f64,
}

/// Exact log marginal likelihood of the sparse spectrum GP and its gradient
/// with respect to `[σ_power, σ_noise, lengthscales…, spectral points…]` in
/// raw coordinates.
pub fn ssgp_log_marginal(
    layer: &LayerParams,
    x: &Matrix,
    y: &[f64],
    gradient: bool,
) -> Result<(f64, Option<Vec<f64>>, Vec<f64>)> {
    let spec = Spectrum::new(&layer.hyper, &layer.basis)?.without_variances();
    let (n, q, m) = (x.rows(), x.cols(), spec.features);
    let zeros = vec![0.0; q];
    let mut phi = Matrix::zeros(n, m);
    let mut psi2 = Matrix::zeros(m, m);
    for i in 0..n {
        spec.psi1_row(x.row(i), &zeros, phi.row_mut(i));
        spec.psi2_add(x.row(i), &zeros, psi2.as_mut_slice());
    }
    let proj = phi.tr_mul_vec(y)?;
    let terms = CollapsedTerms {
        psi2: psi2.clone(),
        proj: Matrix::from_vec(m, 1, proj.clone())?,
        yty: dot(y, y),
        rows: n,
    };
    let c = collapsed_bound(&terms, layer.hyper.sigma_noise(), 0)?;
    let alpha = c.alpha.column(0);
    if !gradient {
        return Ok((c.value, None, alpha));
    }
    let s2 = c.noise_var;
    let inv = c.chol.inverse();
    let mut g2 = inv.clone();
    g2.scale(-0.5);
    for i in 0..m {
        for j in 0..m {
            g2[(i, j)] -= 0.5 / s2 * alpha[i] * alpha[j];
        }
    }
    let mut sg = SpectrumGrad::zeros(&spec);
    let (mut dm, mut dv) = (vec![0.0; q], vec![0.0; q]);
    let mut g1 = vec![0.0; m];
    for i in 0..n {
        for (g, a) in g1.iter_mut().zip(&alpha) {
            *g = y[i] * a / s2;
        }
        spec.backward(
            x.row(i),
            &zeros,
            &g1,
            g2.as_slice(),
            &mut sg,
            &mut dm,
            &mut dv,
        );
    }
    let pa = dot(&proj, &alpha);
    let d_sp = (pa / s2 + 2.0 * g2.frobenius_dot(&psi2)) / spec.sigma_power;
    let d_s2 = -(n as f64 - m as f64) / (2.0 * s2) + terms.yty / (2.0 * s2 * s2)
        - pa / (2.0 * s2 * s2)
        - dot(&alpha, &alpha) / (2.0 * s2)
        - 0.5 * inv.trace();
    let (dz, _, dl) = spec.chain_frequencies(&sg);
    let h = &layer.hyper;
    let mut grad = Vec::with_capacity(2 + q + m * q);
    grad.push(d_sp * positive_derivative(h.sigma_power));
    grad.push(d_s2 * 2.0 * h.sigma_noise() * positive_derivative(h.sigma_noise));
    grad.extend(
        dl.iter()
            .zip(&h.lengthscales)
            .map(|(g, r)| g * positive_derivative(*r)),
    );
    grad.extend_from_slice(&dz);
    Ok((c.value, Some(grad), alpha))
}

fn ssgp_pack(layer: &LayerParams) -> Vec<f64> {
    let mut v = vec![layer.hyper.sigma_power, layer.hyper.sigma_noise];
    v.extend_from_slice(&layer.hyper.lengthscales);
    v.extend_from_slice(layer.basis.freq.as_slice());
    v
}

fn ssgp_unpack(layer: &mut LayerParams, v: &[f64]) {
    let q = layer.hyper.lengthscales.len();
    layer.hyper.sigma_power = v[0];
    layer.hyper.sigma_noise = v[1];
    layer.hyper.lengthscales.copy_from_slice(&v[2..2 + q]);
    layer.basis.freq.as_mut_slice().copy_from_slice(&v[2 + q..]);
}

/// Fits a sparse spectrum GP by maximising its marginal likelihood.
pub fn fit_gp_ss_narx(
    design: &NarxDesign,
    features: usize,
    seed: u64,
    iters: usize,
) -> Result<SsgpNarx> {
    let x = &design.regressors;
    let hyper = Hyperparams::new(1.0, 0.1, &column_lengthscales(x))?;
    let basis = init_basis(features, x.cols(), seed, PseudoInit::Zero, None)?;
    let mut layer = LayerParams { hyper, basis };
    let y = &design.targets;
    let mut work = layer.clone();
    let cfg = LbfgsConfig {
        max_iters: iters,
        ..LbfgsConfig::default()
    };
    let out = minimize(
        |v| {
            ssgp_unpack(&mut work, v);
            let (val, g, _) = ssgp_log_marginal(&work, x, y, true).ok()?;
            Some((-val, g?.into_iter().map(|e| -e).collect()))
        },
        ssgp_pack(&layer),
        &cfg,
        |_| {},
    );
    if let Some(o) = out {
        ssgp_unpack(&mut layer, &o.x);
    }
    let (log_marginal, _, weight_mean) = ssgp_log_marginal(&layer, x, y, false)?;
    Ok(SsgpNarx {
        layer,
        weight_mean,
        log_marginal,
    })
}

impl NarxRegressor for SsgpNarx {
    fn predict_mean(&self, row: &[f64]) -> Result<f64> {
        let phi = crate::features::feature_map(row, &self.layer.basis, &self.layer.hyper)?;
        Ok(dot(&phi, &self.weight_mean))
    }
}

/// Exact GP with a squared exponential kernel.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FullGpNarx {
    /// Raw `[σ_power, σ_noise, lengthscales…]`.
    pub raw: Vec<f64>,
    pub train: Matrix,
    /// `K⁻¹ y`.
    pub weights: Vec<f64>,
    pub log_marginal: f64,
}

fn se(a: &[f64], b: &[f64], sp2: f64, ls: &[f64]) -> f64 {
    let mut s = 0.0;
    for q in 0..a.len() {
        let t = (a[q] - b[q]) / ls[q];
        s += t * t;
    }
    sp2 * libm::exp(-0.5 * s)
}

/// Exact log marginal likelihood of the full GP and its raw-coordinate gradient.
pub fn full_gp_log_marginal(
    raw: &[f64],
    x: &Matrix,
    y: &[f64],
    gradient: bool,
) -> Result<(f64, Option<Vec<f64>>, Vec<f64>)> {
    let (n, q) = (x.rows(), x.cols());
    let sp = positive(raw[0]);
    let sn = positive(raw[1]);
    let ls: Vec<f64> = raw[2..].iter().map(|&r| positive(r)).collect();
    let mut k = Matrix::from_fn(n, n, |i, j| se(x.row(i), x.row(j), sp * sp, &ls));
    let kf = if gradient { Some(k.clone()) } else { None };
    k.add_diagonal(sn * sn);
    let chol = Cholesky::new(&k, 0)?;
    let alpha = chol.solve(y);
    let value = -0.5 * dot(y, &alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * LN_2PI;
    let Some(kf) = kf else {
        return Ok((value, None, alpha));
    };
    // ½ tr((ααᵀ - K⁻¹) dK)
    let inv = chol.inverse();
    let w = Matrix::from_fn(n, n, |i, j| alpha[i] * alpha[j] - inv[(i, j)]);
    let mut g = vec![0.0; 2 + q];
    g[0] = 0.5 * w.frobenius_dot(&kf) * 2.0 / sp * positive_derivative(raw[0]);
    g[1] = 0.5 * w.trace() * 2.0 * sn * positive_derivative(raw[1]);
    for d in 0..q {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let t = x[(i, d)] - x[(j, d)];
                s += w[(i, j)] * kf[(i, j)] * t * t;
            }
        }
        g[2 + d] = 0.5 * s / (ls[d] * ls[d] * ls[d]) * positive_derivative(raw[2 + d]);
    }
    Ok((value, Some(g), alpha))
}

/// Fits the full GP by maximising its marginal likelihood.
pub fn fit_gp_full_narx(design: &NarxDesign, iters: usize) -> Result<FullGpNarx> {
    let x = &design.regressors;
    let y = &design.targets;
    let mut raw = vec![inverse_transform(1.0)?, inverse_transform(0.1)?];
    for l in column_lengthscales(x) {
        raw.push(inverse_transform(l)?);
    }
    let cfg = LbfgsConfig {
        max_iters: iters,
        ..LbfgsConfig::default()
    };
    if let Some(o) = minimize(
        |v| {
            let (val, g, _) = full_gp_log_marginal(v, x, y, true).ok()?;
            Some((-val, g?.into_iter().map(|e| -e).collect()))
        },
        raw.clone(),
        &cfg,
        |_| {},
    ) {
        raw = o.x;
    }
    let (log_marginal, _, weights) = full_gp_log_marginal(&raw, x, y, false)?;
    Ok(FullGpNarx {
        raw,
        train: x.clone(),
        weights,
        log_marginal,
    })
}

impl NarxRegressor for FullGpNarx {
    fn predict_mean(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.train.cols() {
            bail!(
                Dimension,
                "row of width {}, model expects {}",
                row.len(),
                self.train.cols()
            );
        }
        let sp = positive(self.raw[0]);
        let ls: Vec<f64> = self.raw[2..].iter().map(|&r| positive(r)).collect();
        Ok((0..self.train.rows())
            .map(|i| se(row, self.train.row(i), sp * sp, &ls) * self.weights[i])
            .sum())
    }
}
