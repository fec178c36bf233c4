//! Reference computations that share no code with the library: direct
//! sampling of the random feature vector and dense linear algebra.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Plain description of one layer's feature map.
#[derive(Debug, Clone)]
pub struct FeatureSpec {
    pub amplitude: f64,
    pub lengthscales: Vec<f64>,
    /// Angular offsets `2π/p` per input dimension, zero for infinite periods.
    pub offsets: Vec<f64>,
    /// Row-major `M×Q`.
    pub points: Vec<f64>,
    pub centres: Vec<f64>,
    pub phases: Vec<f64>,
    /// Row-major `M×Q` variances of the spectral points, if random.
    pub point_vars: Option<Vec<f64>>,
}

impl FeatureSpec {
    pub fn features(&self) -> usize {
        self.phases.len()
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Feature vector at `x` with the spectral points shifted by `noise`.
    fn eval(&self, x: &[f64], noise: Option<&[f64]>, out: &mut [f64]) {
        let (m, q) = (self.features(), self.dim());
        let scale = self.amplitude * (2.0 / m as f64).sqrt();
        for i in 0..m {
            let mut arg = self.phases[i];
            for j in 0..q {
                let k = i * q + j;
                let z = self.points[k] + noise.map_or(0.0, |e| e[k]);
                arg += (z / self.lengthscales[j] + self.offsets[j]) * (x[j] - self.centres[k]);
            }
            out[i] = scale * arg.cos();
        }
    }

    /// Deterministic feature matrix, one row per input.
    pub fn design(&self, inputs: &[Vec<f64>]) -> DMatrix<f64> {
        let m = self.features();
        let mut phi = DMatrix::zeros(inputs.len(), m);
        let mut row = vec![0.0; m];
        for (n, x) in inputs.iter().enumerate() {
            self.eval(x, None, &mut row);
            for i in 0..m {
                phi[(n, i)] = row[i];
            }
        }
        phi
    }
}

/// Sample mean of the first and second moments of the feature vector and
/// the standard errors of those means.
pub struct Sampled {
    pub first: Vec<f64>,
    pub first_se: Vec<f64>,
    /// Row-major `M×M`.
    pub second: Vec<f64>,
    pub second_se: Vec<f64>,
}

/// Draws `samples` inputs from `N(mean, diag(var))` together with fresh
/// spectral points for every draw.
pub fn sample_moments(
    spec: &FeatureSpec,
    mean: &[f64],
    var: &[f64],
    samples: usize,
    seed: u64,
) -> Sampled {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, q) = (spec.features(), spec.dim());
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let point_sd: Option<Vec<f64>> = spec
        .point_vars
        .as_ref()
        .map(|b| b.iter().map(|v| v.sqrt()).collect());
    let mut noise = vec![0.0; m * q];
    let mut x = vec![0.0; q];
    let mut phi = vec![0.0; m];
    let (mut s1, mut q1) = (vec![0.0; m], vec![0.0; m]);
    let (mut s2, mut q2) = (vec![0.0; m * m], vec![0.0; m * m]);
    for _ in 0..samples {
        for j in 0..q {
            x[j] = mean[j] + sd[j] * rng.sample::<f64, _>(StandardNormal);
        }
        if let Some(psd) = &point_sd {
            for (e, s) in noise.iter_mut().zip(psd) {
                *e = s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        spec.eval(&x, point_sd.as_ref().map(|_| noise.as_slice()), &mut phi);
        for i in 0..m {
            s1[i] += phi[i];
            q1[i] += phi[i] * phi[i];
            for k in i..m {
                let p = phi[i] * phi[k];
                s2[i * m + k] += p;
                q2[i * m + k] += p * p;
            }
        }
    }
    for i in 0..m {
        for k in 0..i {
            s2[i * m + k] = s2[k * m + i];
            q2[i * m + k] = q2[k * m + i];
        }
    }
    let s = samples as f64;
    let finish = |sum: Vec<f64>, sq: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let mu: Vec<f64> = sum.iter().map(|v| v / s).collect();
        let se = sq
            .iter()
            .zip(&mu)
            .map(|(q, m)| ((q / s - m * m).max(0.0) * s / (s - 1.0) / s).sqrt())
            .collect();
        (mu, se)
    };
    let (first, first_se) = finish(s1, q1);
    let (second, second_se) = finish(s2, q2);
    Sampled {
        first,
        first_se,
        second,
        second_se,
    }
}

/// `Σ_d log N(y_d; 0, ΦΦᵀ + σ²I)` with `targets` holding one column per output.
pub fn dense_log_marginal(phi: &DMatrix<f64>, targets: &DMatrix<f64>, noise_var: f64) -> f64 {
    let n = phi.nrows();
    let k = phi * phi.transpose() + DMatrix::identity(n, n) * noise_var;
    let chol = k.cholesky().expect("covariance is positive definite");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    (0..targets.ncols())
        .map(|d| {
            let y: DVector<f64> = targets.column(d).into_owned();
            let alpha = chol.solve(&y);
            -0.5 * y.dot(&alpha)
                - 0.5 * log_det
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
        })
        .sum()
}

/// Evidence lower bound of one layer for the weight posterior `N(mean_d, cov)`
/// per output column, with a standard normal prior on the weights.
pub fn explicit_bound(
    psi1: &DMatrix<f64>,
    psi2: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    noise_var: f64,
) -> f64 {
    let (n, d) = targets.shape();
    let m = cov.nrows();
    let (n, d, mf) = (n as f64, d as f64, m as f64);
    let yy = targets.norm_squared();
    let fit = (targets.transpose() * psi1 * mean).trace();
    let second = d * (cov * psi2).trace() + (mean.transpose() * psi2 * mean).trace();
    let log_det_cov: f64 = cov
        .clone()
        .cholesky()
        .expect("covariance is positive definite")
        .l()
        .diagonal()
        .iter()
        .map(|v| 2.0 * v.ln())
        .sum();
    let kl = 0.5 * (d * cov.trace() + mean.norm_squared() - mf * d - d * log_det_cov);
    -0.5 * n * d * (2.0 * std::f64::consts::PI * noise_var).ln() - yy / (2.0 * noise_var)
        + fit / noise_var
        - second / (2.0 * noise_var)
        - kl
}

/// Maximiser of [`explicit_bound`] over the weight posterior.
pub fn optimal_posterior(
    psi1: &DMatrix<f64>,
    psi2: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    noise_var: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = psi2.nrows();
    let a = psi2 + DMatrix::identity(m, m) * noise_var;
    let inv = a
        .try_inverse()
        .expect("regularised second moment is invertible");
    let mean = &inv * psi1.transpose() * targets;
    (mean, inv * noise_var)
}

pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Central difference of `f` along coordinate `i`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let h = 1e-5 * x[i].abs().max(1.0);
    let mut xp = x.to_vec();
    xp[i] += h;
    let mut xm = x.to_vec();
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}
