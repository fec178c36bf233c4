#![allow(dead_code)]

use drgp_core::{
    Dataset, DrgpModel, Hyperparams, LatentState, LayerParams, Matrix, ModelConfig, SpectralBasis,
    Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Random layer with input width `q`.
pub fn random_layer(rng: &mut ChaCha8Rng, m: usize, q: usize, variational: bool) -> LayerParams {
    let ls: Vec<f64> = (0..q).map(|_| rng.random_range(0.6..2.0)).collect();
    let hyper =
        Hyperparams::new(rng.random_range(0.7..1.5), rng.random_range(0.2..0.6), &ls).unwrap();
    let freq = normal_matrix(rng, m, q, 1.0);
    let pseudo = normal_matrix(rng, m, q, 0.8);
    let phase = (0..m)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let mut basis = SpectralBasis::new(freq, pseudo, phase).unwrap();
    if variational {
        basis = basis
            .with_variances(&uniform_matrix(rng, m, q, 0.05, 0.5))
            .unwrap();
    }
    LayerParams { hyper, basis }
}

pub fn random_series(rng: &mut ChaCha8Rng, n: usize, q: usize) -> Dataset {
    let mut x = Matrix::zeros(n, q);
    let mut y = vec![0.0; n];
    let mut state = 0.0f64;
    for i in 0..n {
        for j in 0..q {
            x[(i, j)] =
                (0.3 * i as f64 + j as f64).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        state = 0.7 * state + 0.5 * x[(i, 0)].tanh() + 0.05 * rng.sample::<f64, _>(StandardNormal);
        y[i] = state;
    }
    Dataset::new(x, y, (0..=q).map(|j| format!("c{j}")).collect()).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, config: ModelConfig, data: &Dataset) -> DrgpModel {
    let variational = config.variant == Variant::Vss;
    let layers = (0..config.gp_layers())
        .map(|l| random_layer(rng, config.features, config.layer_input_dim(l), variational))
        .collect();
    let len = config.state_len(data.len());
    let off = config.input_lags + 1 - config.state_lags;
    let states = (0..config.layers)
        .map(|_| {
            let mean: Vec<f64> = (0..len)
                .map(|k| data.outputs[k + off - 1] + 0.2 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let var: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..0.6)).collect();
            LatentState::new(mean, &var).unwrap()
        })
        .collect();
    DrgpModel {
        config,
        layers,
        states,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Monte-Carlo moments of the feature vector for one uncertain input.
pub struct McMoments {
    pub psi1: Vec<f64>,
    pub psi1_se: Vec<f64>,
    /// Row-major `M×M`.
    pub psi2: Vec<f64>,
    pub psi2_se: Vec<f64>,
}

/// Samples `h ~ N(mean, var)` and, when the layer carries spectral variances,
/// independent `z_m ~ N(z_m, β_m)` per feature, written directly from the
/// feature definition `σ√(2/M) cos(Σ_q (z_q/l_q)(h_q - u_q) + b)`.
pub fn mc_moments(
    layer: &LayerParams,
    mean: &[f64],
    var: &[f64],
    samples: usize,
    seed: u64,
) -> McMoments {
    let mut r = rng(seed);
    let (m, q) = layer.basis.freq.shape();
    let sp = layer.hyper.sigma_power();
    let amp = sp * (2.0 / m as f64).sqrt();
    let ls = layer.hyper.lengthscales();
    let beta = layer.basis.variances();
    let mut s1 = vec![0.0; m];
    let mut q1 = vec![0.0; m];
    let mut s2 = vec![0.0; m * m];
    let mut q2 = vec![0.0; m * m];
    let mut h = vec![0.0; q];
    let mut phi = vec![0.0; m];
    for _ in 0..samples {
        for j in 0..q {
            h[j] = mean[j] + var[j].sqrt() * r.sample::<f64, _>(StandardNormal);
        }
        for i in 0..m {
            let mut arg = layer.basis.phase[i];
            for j in 0..q {
                let mut z = layer.basis.freq[(i, j)];
                if let Some(b) = &beta {
                    z += b[(i, j)].sqrt() * r.sample::<f64, _>(StandardNormal);
                }
                arg += z / ls[j] * (h[j] - layer.basis.pseudo[(i, j)]);
            }
            phi[i] = amp * arg.cos();
        }
        for i in 0..m {
            s1[i] += phi[i];
            q1[i] += phi[i] * phi[i];
            for k in 0..m {
                let p = phi[i] * phi[k];
                s2[i * m + k] += p;
                q2[i * m + k] += p * p;
            }
        }
    }
    let s = samples as f64;
    let finish = |sum: Vec<f64>, sq: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let mean: Vec<f64> = sum.iter().map(|v| v / s).collect();
        let se = sq
            .iter()
            .zip(&mean)
            .map(|(q, mu)| ((q / s - mu * mu).max(0.0) / (s - 1.0)).sqrt())
            .collect();
        (mean, se)
    };
    let (psi1, psi1_se) = finish(s1, q1);
    let (psi2, psi2_se) = finish(s2, q2);
    McMoments {
        psi1,
        psi1_se,
        psi2,
        psi2_se,
    }
}

/// Smallest eigenvalue of the symmetrised matrix.
pub fn min_sym_eigenvalue(a: &Matrix) -> f64 {
    let n = a.rows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    m.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// `log N(y; 0, K)` through a dense Cholesky factorisation.
pub fn dense_log_gauss(k: &nalgebra::DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len();
    let chol = k
        .clone()
        .cholesky()
        .expect("covariance must be positive definite");
    let yv = nalgebra::DVector::from_column_slice(y);
    let sol = chol.solve(&yv);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * yv.dot(&sol) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// `ΦΦᵀ + σ²I` from a feature matrix.
pub fn feature_covariance(phi: &Matrix, noise_var: f64) -> nalgebra::DMatrix<f64> {
    let p = nalgebra::DMatrix::from_row_slice(phi.rows(), phi.cols(), phi.as_slice());
    let mut k = &p * p.transpose();
    for i in 0..phi.rows() {
        k[(i, i)] += noise_var;
    }
    k
}
