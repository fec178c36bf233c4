//! Cosine feature map, spectral mixture kernel and basis sampling.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{bail, Result};
use crate::linalg::Matrix;
use crate::types::{Hyperparams, SpectralBasis};

/// Spectral mixture kernel with one component per input dimension.
pub fn sm_kernel(x: &[f64], x2: &[f64], hyper: &Hyperparams) -> Result<f64> {
    if x.len() != x2.len() || x.len() != hyper.dim() {
        bail!(
            Dimension,
            "kernel inputs of width {} and {} for {} lengthscales",
            x.len(),
            x2.len(),
            hyper.dim()
        );
    }
    let mut quad = 0.0;
    let mut phase = 0.0;
    for q in 0..x.len() {
        let tau = x[q] - x2[q];
        let l = hyper.lengthscale(q);
        quad += tau * tau / (l * l);
        phase += tau * hyper.periods[q].frequency_shift();
    }
    let sp = hyper.sigma_power();
    Ok(sp * sp * libm::exp(-0.5 * quad) * libm::cos(phase))
}

/// Scaled spectral points `z / l + 2π/p` of every feature, row-major `M×Q`.
pub fn scaled_frequencies(basis: &SpectralBasis, hyper: &Hyperparams) -> Vec<f64> {
    let (m, q) = basis.freq.shape();
    let mut out = Vec::with_capacity(m * q);
    let inv_l: Vec<f64> = hyper.lengthscales().iter().map(|l| 1.0 / l).collect();
    for i in 0..m {
        for (j, z) in basis.freq.row(i).iter().enumerate() {
            out.push(z * inv_l[j] + hyper.periods[j].frequency_shift());
        }
    }
    out
}

fn check_dims(width: usize, basis: &SpectralBasis, hyper: &Hyperparams) -> Result<()> {
    if width != basis.dim() || width != hyper.dim() {
        bail!(
            Dimension,
            "input width {width}, basis width {}, lengthscales {}",
            basis.dim(),
            hyper.dim()
        );
    }
    Ok(())
}

/// Feature vector `φ(x)` of length `M`.
pub fn feature_map(x: &[f64], basis: &SpectralBasis, hyper: &Hyperparams) -> Result<Vec<f64>> {
    check_dims(x.len(), basis, hyper)?;
    let freq = scaled_frequencies(basis, hyper);
    Ok(features_with(x, &freq, basis, hyper.sigma_power()))
}

fn features_with(x: &[f64], freq: &[f64], basis: &SpectralBasis, sigma_power: f64) -> Vec<f64> {
    let (m, q) = basis.freq.shape();
    let amp = sigma_power * libm::sqrt(2.0 / m as f64);
    (0..m)
        .map(|i| {
            let u = basis.pseudo.row(i);
            let w = &freq[i * q..(i + 1) * q];
            let mut arg = basis.phase[i];
            for j in 0..q {
                arg += w[j] * (x[j] - u[j]);
            }
            amp * libm::cos(arg)
        })
        .collect()
}

/// Feature matrix `Φ` with one row per input row.
pub fn feature_matrix(x: &Matrix, basis: &SpectralBasis, hyper: &Hyperparams) -> Result<Matrix> {
    check_dims(x.cols(), basis, hyper)?;
    let freq = scaled_frequencies(basis, hyper);
    let m = basis.features();
    let mut out = Matrix::zeros(x.rows(), m);
    for i in 0..x.rows() {
        let row = features_with(x.row(i), &freq, basis, hyper.sigma_power());
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// Placement of the pseudo-input points at initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PseudoInit {
    Zero,
    /// Distinct rows of the supplied input matrix, drawn without replacement.
    #[default]
    SubsetOfInputs,
}

/// Draws spectral points from `N(0, I)` and phases from `[0, 2π)`.
pub fn init_basis(
    m: usize,
    q: usize,
    seed: u64,
    pseudo: PseudoInit,
    inputs: Option<&Matrix>,
) -> Result<SpectralBasis> {
    if m == 0 {
        bail!(Config, "feature count must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freq = Matrix::from_fn(m, q, |_, _| rng.sample(StandardNormal));
    let phase: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let pseudo = match pseudo {
        PseudoInit::Zero => Matrix::zeros(m, q),
        PseudoInit::SubsetOfInputs => {
            let Some(x) = inputs else {
                bail!(Config, "subset initialisation needs an input matrix");
            };
            if x.cols() != q {
                bail!(
                    Dimension,
                    "input matrix has width {}, basis needs {q}",
                    x.cols()
                );
            }
            if x.rows() < m {
                bail!(
                    Config,
                    "{} input rows cannot supply {m} distinct pseudo-inputs",
                    x.rows()
                );
            }
            let picks = rand::seq::index::sample(&mut rng, x.rows(), m);
            let mut u = Matrix::zeros(m, q);
            for (i, r) in picks.iter().enumerate() {
                u.row_mut(i).copy_from_slice(x.row(r));
            }
            u
        }
    };
    SpectralBasis::new(freq, pseudo, phase)
}
