//! Expectations of the feature map under Gaussian inputs.
//!
//! For inputs `h ~ N(μ, diag λ)` (and, in the variational variant, spectral
//! points `z ~ N(α, diag β)`) this module computes `Ψ₁ = E[Φ]` and
//! `Ψ₂ = Σ_n E[φ(h_n) φ(h_n)ᵀ]`, plus reverse-mode derivatives of any linear
//! functional of them. The per-sample kernels live in [`ss`] and [`vss`];
//! sums over samples always go through [`block_sum`] so that every caller
//! adds floating point numbers in the same order.

mod ss;
mod vss;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{bail, Result};
use crate::features::scaled_frequencies;
use crate::linalg::Matrix;
use crate::types::{Hyperparams, SpectralBasis};

/// Samples per leaf of the summation tree.
pub const BLOCK: usize = 32;

/// Clamp applied to exponent arguments before `exp`.
pub(crate) const EXP_FLOOR: f64 = -700.0;

#[inline]
pub(crate) fn exp_clamped(x: f64) -> f64 {
    libm::exp(if x < EXP_FLOOR { EXP_FLOOR } else { x })
}

/// Leaf ranges of the summation tree over `0..n`.
pub fn leaf_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(BLOCK))
        .map(|b| b * BLOCK..((b + 1) * BLOCK).min(n))
        .collect()
}

/// Pairwise reduction of leaves in index order.
pub fn tree_reduce<T>(mut items: Vec<T>, add: impl Fn(&mut T, &T)) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                add(&mut a, &b);
            }
            next.push(a);
        }
        items = next;
    }
    items.into_iter().next()
}

/// Sums `f(n)` contributions over `0..n` leaf by leaf, then pairwise.
pub fn block_sum(n: usize, len: usize, mut f: impl FnMut(usize, &mut [f64])) -> Vec<f64> {
    let leaves: Vec<Vec<f64>> = leaf_ranges(n)
        .into_iter()
        .map(|r| {
            let mut acc = vec![0.0; len];
            for i in r {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    tree_reduce(leaves, |a, b| {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y)
    })
    .unwrap_or_else(|| vec![0.0; len])
}

/// Layer parameters resolved to the quantities the kernels consume.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub features: usize,
    pub dim: usize,
    pub sigma_power: f64,
    pub lengthscale: Vec<f64>,
    /// Raw spectral points `z` (or their means).
    pub z: Vec<f64>,
    /// Scaled frequencies `z / l + 2π/p`, row-major `M×Q`.
    pub freq: Vec<f64>,
    /// Spectral point variances `β` and their scaled form `β / l²`.
    pub beta: Option<Vec<f64>>,
    pub freq_var: Option<Vec<f64>>,
    pub pseudo: Vec<f64>,
    pub phase: Vec<f64>,
}

impl Spectrum {
    pub fn new(hyper: &Hyperparams, basis: &SpectralBasis) -> Result<Self> {
        if hyper.dim() != basis.dim() {
            bail!(
                Dimension,
                "{} lengthscales for a basis of width {}",
                hyper.dim(),
                basis.dim()
            );
        }
        let (m, q) = basis.freq.shape();
        let lengthscale = hyper.lengthscales();
        let beta = basis.variances().map(Matrix::into_vec);
        let freq_var = beta.as_ref().map(|b| {
            b.iter()
                .enumerate()
                .map(|(k, v)| v / (lengthscale[k % q] * lengthscale[k % q]))
                .collect()
        });
        Ok(Self {
            features: m,
            dim: q,
            sigma_power: hyper.sigma_power(),
            z: basis.freq.as_slice().to_vec(),
            freq: scaled_frequencies(basis, hyper),
            lengthscale,
            beta,
            freq_var,
            pseudo: basis.pseudo.as_slice().to_vec(),
            phase: basis.phase.clone(),
        })
    }

    /// Same spectrum with the spectral variances dropped.
    pub fn without_variances(mut self) -> Self {
        self.beta = None;
        self.freq_var = None;
        self
    }

    /// Amplitude of a single feature, `σ_power √(2/M)`.
    pub fn amp1(&self) -> f64 {
        self.sigma_power * libm::sqrt(2.0 / self.features as f64)
    }

    /// Prefactor of the second moment, `σ_power² / M`.
    pub fn amp2(&self) -> f64 {
        self.sigma_power * self.sigma_power / self.features as f64
    }

    /// Ψ₁ row of one sample written into `out` (length `M`).
    pub fn psi1_row(&self, mean: &[f64], var: &[f64], out: &mut [f64]) {
        match &self.freq_var {
            None => ss::psi1_row(self, mean, var, out),
            Some(b) => vss::psi1_row(self, b, mean, var, out),
        }
    }

    /// Adds the sample's `M×M` second moment to `acc` (row-major).
    pub fn psi2_add(&self, mean: &[f64], var: &[f64], acc: &mut [f64]) {
        match &self.freq_var {
            None => ss::psi2_add(self, mean, var, acc),
            Some(b) => vss::psi2_add(self, b, mean, var, acc),
        }
    }

    /// Reverse pass for one sample of `Σ_m g1_m Ψ₁[n,m] + Σ_mm' g2_mm' Ψ₂ⁿ_mm'`.
    ///
    /// `g2` must be symmetric. Derivatives with respect to the scaled
    /// frequencies, their variances, pseudo-inputs and phases accumulate in
    /// `grad`; the sample's input derivatives accumulate in `dmean`, `dvar`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        mean: &[f64],
        var: &[f64],
        g1: &[f64],
        g2: &[f64],
        grad: &mut SpectrumGrad,
        dmean: &mut [f64],
        dvar: &mut [f64],
    ) {
        match &self.freq_var {
            None => ss::backward(self, mean, var, g1, g2, grad, dmean, dvar),
            Some(b) => vss::backward(self, b, mean, var, g1, g2, grad, dmean, dvar),
        }
    }

    /// Converts derivatives with respect to scaled frequencies into
    /// derivatives with respect to spectral points, their variances and the
    /// lengthscales. Returns `(d_z, d_beta, d_lengthscale)`.
    pub fn chain_frequencies(&self, grad: &SpectrumGrad) -> (Vec<f64>, Option<Vec<f64>>, Vec<f64>) {
        let q = self.dim;
        let mut dz = vec![0.0; grad.freq.len()];
        let mut dl = vec![0.0; q];
        for (k, g) in grad.freq.iter().enumerate() {
            let l = self.lengthscale[k % q];
            dz[k] = g / l;
            dl[k % q] -= g * self.z[k] / (l * l);
        }
        let dbeta = match (&self.beta, &grad.freq_var) {
            (Some(beta), Some(gv)) => {
                let mut db = vec![0.0; gv.len()];
                for (k, g) in gv.iter().enumerate() {
                    let l = self.lengthscale[k % q];
                    db[k] = g / (l * l);
                    dl[k % q] -= 2.0 * g * beta[k] / (l * l * l);
                }
                Some(db)
            }
            _ => None,
        };
        (dz, dbeta, dl)
    }
}

/// Accumulated derivatives with respect to the resolved spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrad {
    pub freq: Vec<f64>,
    pub freq_var: Option<Vec<f64>>,
    pub pseudo: Vec<f64>,
    pub phase: Vec<f64>,
}

impl SpectrumGrad {
    pub fn zeros(spec: &Spectrum) -> Self {
        let mq = spec.features * spec.dim;
        Self {
            freq: vec![0.0; mq],
            freq_var: spec.freq_var.as_ref().map(|_| vec![0.0; mq]),
            pseudo: vec![0.0; mq],
            phase: vec![0.0; spec.features],
        }
    }

    pub fn add(&mut self, other: &SpectrumGrad) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.freq, &other.freq);
        add(&mut self.pseudo, &other.pseudo);
        add(&mut self.phase, &other.phase);
        if let (Some(a), Some(b)) = (&mut self.freq_var, &other.freq_var) {
            add(a, b);
        }
    }
}

/// Ψ₁, the summed Ψ₂ and optionally the per-sample Ψ₂ⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiStats {
    pub psi1: Matrix,
    pub psi2: Matrix,
    pub psi2_per_sample: Option<Vec<Matrix>>,
}

fn check_inputs(mean: &Matrix, var: &Matrix, spec: &Spectrum) -> Result<()> {
    if mean.shape() != var.shape() {
        bail!(
            Dimension,
            "means {:?} and variances {:?} differ in shape",
            mean.shape(),
            var.shape()
        );
    }
    if mean.cols() != spec.dim {
        bail!(
            Dimension,
            "inputs have width {}, basis expects {}",
            mean.cols(),
            spec.dim
        );
    }
    if var.as_slice().iter().any(|v| !(*v >= 0.0)) {
        bail!(Domain, "input variances must be non-negative");
    }
    Ok(())
}

fn batch_psi1(mean: &Matrix, var: &Matrix, spec: &Spectrum) -> Result<Matrix> {
    check_inputs(mean, var, spec)?;
    let mut out = Matrix::zeros(mean.rows(), spec.features);
    for n in 0..mean.rows() {
        spec.psi1_row(mean.row(n), var.row(n), out.row_mut(n));
    }
    Ok(out)
}

fn batch_psi2(
    mean: &Matrix,
    var: &Matrix,
    spec: &Spectrum,
    keep: bool,
) -> Result<(Matrix, Option<Vec<Matrix>>)> {
    check_inputs(mean, var, spec)?;
    let m = spec.features;
    let total = block_sum(mean.rows(), m * m, |n, acc| {
        spec.psi2_add(mean.row(n), var.row(n), acc)
    });
    let per_sample = keep.then(|| {
        (0..mean.rows())
            .map(|n| {
                let mut one = Matrix::zeros(m, m);
                spec.psi2_add(mean.row(n), var.row(n), one.as_mut_slice());
                one
            })
            .collect()
    });
    Ok((Matrix::from_vec(m, m, total)?, per_sample))
}

fn variational(hyper: &Hyperparams, basis: &SpectralBasis) -> Result<Spectrum> {
    if !basis.has_variances() {
        bail!(
            Config,
            "the variational statistics need spectral point variances"
        );
    }
    Spectrum::new(hyper, basis)
}

/// Ψ₁ with fixed spectral points; spectral variances, if any, are ignored.
pub fn psi1_ss(
    mean: &Matrix,
    var: &Matrix,
    basis: &SpectralBasis,
    hyper: &Hyperparams,
) -> Result<Matrix> {
    batch_psi1(mean, var, &Spectrum::new(hyper, basis)?.without_variances())
}

/// Summed Ψ₂ with fixed spectral points, optionally with per-sample terms.
pub fn psi2_ss(
    mean: &Matrix,
    var: &Matrix,
    basis: &SpectralBasis,
    hyper: &Hyperparams,
    keep_per_sample: bool,
) -> Result<(Matrix, Option<Vec<Matrix>>)> {
    batch_psi2(
        mean,
        var,
        &Spectrum::new(hyper, basis)?.without_variances(),
        keep_per_sample,
    )
}

/// Ψ₁ with Gaussian spectral points and randomised phases.
pub fn psi1_vss(
    mean: &Matrix,
    var: &Matrix,
    basis: &SpectralBasis,
    hyper: &Hyperparams,
) -> Result<Matrix> {
    batch_psi1(mean, var, &variational(hyper, basis)?)
}

/// Summed Ψ₂ with Gaussian spectral points and randomised phases.
pub fn psi2_vss(
    mean: &Matrix,
    var: &Matrix,
    basis: &SpectralBasis,
    hyper: &Hyperparams,
    keep_per_sample: bool,
) -> Result<(Matrix, Option<Vec<Matrix>>)> {
    batch_psi2(mean, var, &variational(hyper, basis)?, keep_per_sample)
}

/// Both statistics, with the variant chosen by the presence of spectral variances.
pub fn psi_stats(
    mean: &Matrix,
    var: &Matrix,
    basis: &SpectralBasis,
    hyper: &Hyperparams,
    keep_per_sample: bool,
) -> Result<PsiStats> {
    let spec = Spectrum::new(hyper, basis)?;
    let psi1 = batch_psi1(mean, var, &spec)?;
    let (psi2, psi2_per_sample) = batch_psi2(mean, var, &spec, keep_per_sample)?;
    Ok(PsiStats {
        psi1,
        psi2,
        psi2_per_sample,
    })
}

/// Statistics of a single test input: a Ψ₁ row and its Ψ₂.
pub fn psi_star(mean: &[f64], var: &[f64], spec: &Spectrum) -> Result<(Vec<f64>, Matrix)> {
    if mean.len() != spec.dim || var.len() != spec.dim {
        bail!(
            Dimension,
            "test input of width {}, basis expects {}",
            mean.len(),
            spec.dim
        );
    }
    let m = spec.features;
    let mut psi1 = vec![0.0; m];
    spec.psi1_row(mean, var, &mut psi1);
    let mut psi2 = Matrix::zeros(m, m);
    spec.psi2_add(mean, var, psi2.as_mut_slice());
    Ok((psi1, psi2))
}
