//! Quick numerical self-checks behind the `check` command.
//!
//! Each check compares the library against an independent route to the same
//! number: sampling for the feature expectations, the function-space Gaussian
//! density for the collapsed bound, central differences for the gradient and
//! the serial path for the parallel one.

use drgp_core::bound::{optimal_layer_bound, revarb_objective};
use drgp_core::engine::{evaluate, revarb_gradient, Serial};
use drgp_core::features::feature_matrix;
use drgp_core::linalg::{dot, Cholesky};
use drgp_core::params::ParamLayout;
use drgp_core::psi::{psi1_ss, psi_star, psi_stats, Spectrum};
use drgp_core::recurrent::RecurrentPlan;
use drgp_core::trainer::{initialize, TrainConfig};
use drgp_core::{Dataset, DrgpModel, LayerParams, Matrix, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Parallel;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            detail,
        }
    }
}

/// Smooth two-input series with a nonlinear output.
pub fn synthetic_series(n: usize) -> Dataset {
    let inputs = Matrix::from_fn(n, 1, |i, _| {
        (0.21 * i as f64).sin() + 0.4 * (0.057 * i as f64).cos()
    });
    let mut y = vec![0.0; n];
    for i in 1..n {
        y[i] = 0.7 * y[i - 1] + (1.3 * inputs[(i - 1, 0)]).tanh();
    }
    Dataset::new(inputs, y, vec!["x".into(), "y".into()]).expect("synthetic series is well formed")
}

fn model(
    variant: Variant,
    layers: usize,
    features: usize,
    data: &Dataset,
    seed: u64,
) -> drgp_core::Result<DrgpModel> {
    let config = ModelConfig::new(layers, 2, features, variant, data.input_dim());
    let mut tc = TrainConfig::new(variant);
    tc.beta_init = 0.2;
    tc.state_var_init = 0.3;
    initialize(config, data, &tc, seed)
}

/// Per-feature sample moments of `φ(h)` with `h ~ N(mean, var)` and, for
/// layers with spectral variances, each spectral point drawn independently.
fn sampled_moments(
    layer: &LayerParams,
    mean: &[f64],
    var: &[f64],
    samples: usize,
    seed: u64,
) -> [Vec<f64>; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, q) = layer.basis.freq.shape();
    let amp = layer.hyper.sigma_power() * (2.0 / m as f64).sqrt();
    let ls = layer.hyper.lengthscales();
    let beta = layer.basis.variances();
    let (mut s1, mut q1, mut s2, mut q2) = (
        vec![0.0; m],
        vec![0.0; m],
        vec![0.0; m * m],
        vec![0.0; m * m],
    );
    let mut phi = vec![0.0; m];
    let mut h = vec![0.0; q];
    for _ in 0..samples {
        for j in 0..q {
            h[j] = mean[j] + var[j].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..m {
            let mut arg = layer.basis.phase[i];
            for j in 0..q {
                let noise = beta.as_ref().map_or(0.0, |b| {
                    b[(i, j)].sqrt() * rng.sample::<f64, _>(StandardNormal)
                });
                arg += (layer.basis.freq[(i, j)] + noise) / ls[j]
                    * (h[j] - layer.basis.pseudo[(i, j)]);
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
    let finish = |sum: &[f64], sq: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mu: Vec<f64> = sum.iter().map(|v| v / s).collect();
        let se = sq
            .iter()
            .zip(&mu)
            .map(|(q, m)| ((q / s - m * m).max(0.0) / (s - 1.0)).sqrt())
            .collect();
        (mu, se)
    };
    let (m1, e1) = finish(&s1, &q1);
    let (m2, e2) = finish(&s2, &q2);
    [m1, e1, m2, e2]
}

fn check_sampling(samples: usize) -> drgp_core::Result<CheckLine> {
    let data = synthetic_series(40);
    let mut worst = 0.0f64;
    for (k, variant) in [Variant::Ss, Variant::Vss].into_iter().enumerate() {
        let m = model(variant, 1, 4, &data, 7 + k as u64)?;
        let layer = &m.layers[0];
        let spec = Spectrum::new(&layer.hyper, &layer.basis)?;
        let q = layer.dim();
        let mean: Vec<f64> = (0..q).map(|j| 0.3 - 0.2 * j as f64).collect();
        let var: Vec<f64> = (0..q).map(|j| 0.1 + 0.05 * j as f64).collect();
        let (p1, p2) = psi_star(&mean, &var, &spec)?;
        let [m1, e1, m2, e2] = sampled_moments(layer, &mean, &var, samples, 100 + k as u64);
        for (a, (b, e)) in p1
            .iter()
            .chain(p2.as_slice())
            .zip(m1.iter().chain(&m2).zip(e1.iter().chain(&e2)))
        {
            worst = worst.max((a - b).abs() / (e + 1e-12));
        }
    }
    Ok(CheckLine::new(
        "feature expectations match sampling",
        worst <= 4.5,
        format!("largest deviation {worst:.2} standard errors"),
    ))
}

fn check_tightness() -> drgp_core::Result<CheckLine> {
    let data = synthetic_series(30);
    let m = model(Variant::Ss, 1, 6, &data, 3)?;
    let layer = &m.layers[0];
    let x = Matrix::from_fn(30, layer.dim(), |i, j| (0.3 * (i + j) as f64).sin());
    let zeros = Matrix::zeros(30, layer.dim());
    let psi = psi_stats(&x, &zeros, &layer.basis, &layer.hyper, false)?;
    let y = Matrix::from_vec(30, 1, data.outputs.clone())?;
    let sn = layer.hyper.sigma_noise();
    let bound = optimal_layer_bound(&psi, &y, sn)?;
    let phi = feature_matrix(&x, &layer.basis, &layer.hyper)?;
    let mut k = phi.matmul(&phi.transpose())?;
    k.add_diagonal(sn * sn);
    let chol = Cholesky::new(&k, 0)?;
    let alpha = chol.solve(&data.outputs);
    let dense = -0.5 * dot(&data.outputs, &alpha)
        - 0.5 * chol.log_det()
        - 15.0 * (2.0 * std::f64::consts::PI).ln();
    let rel = (bound - dense).abs() / dense.abs();
    Ok(CheckLine::new(
        "collapsed bound equals the Gaussian marginal",
        rel <= 1e-8,
        format!("relative difference {rel:.2e}"),
    ))
}

fn check_gradient(variant: Variant) -> drgp_core::Result<CheckLine> {
    let data = synthetic_series(30);
    let m = model(variant, 2, 4, &data, 5)?;
    let layout = ParamLayout::full(&m);
    let x0 = layout.flatten(&m)?;
    let grad = revarb_gradient(&m, &data)?;
    let value = |x: &[f64]| -> drgp_core::Result<f64> {
        let mut work = m.clone();
        layout.unflatten(&mut work, x)?;
        Ok(revarb_objective(&work, &data)?.total)
    };
    let mut worst = 0.0f64;
    for i in 0..x0.len() {
        let h = 1e-5 * x0[i].abs().max(1.0);
        let mut xp = x0.clone();
        xp[i] += h;
        let mut xm = x0.clone();
        xm[i] -= h;
        let fd = (value(&xp)? - value(&xm)?) / (2.0 * h);
        worst = worst.max((grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1.0));
    }
    Ok(CheckLine::new(
        &format!("{variant:?} gradient matches central differences"),
        worst <= 1e-4,
        format!("worst relative error {worst:.2e} over {} entries", x0.len()),
    ))
}

fn check_parallel() -> drgp_core::Result<CheckLine> {
    let data = synthetic_series(150);
    let mut worst = 0.0f64;
    for variant in [Variant::Ss, Variant::Vss] {
        let m = model(variant, 2, 5, &data, 9)?;
        let plan = RecurrentPlan::new(m.config, data.len())?;
        let serial = evaluate(&Serial, 1, &m, &data, &plan, false)?.report.total;
        for workers in [1, 2, 4, 7] {
            let par = evaluate(&Parallel, workers, &m, &data, &plan, false)?
                .report
                .total;
            worst = worst.max((par - serial).abs() / serial.abs().max(1e-300));
        }
    }
    Ok(CheckLine::new(
        "parallel evaluation equals serial",
        worst <= 1e-10,
        format!("largest relative difference {worst:.2e}"),
    ))
}

fn check_limits() -> drgp_core::Result<CheckLine> {
    let data = synthetic_series(30);
    let m = model(Variant::Ss, 1, 6, &data, 11)?;
    let layer = &m.layers[0];
    let x = Matrix::from_fn(8, layer.dim(), |i, j| 0.2 * i as f64 - 0.1 * j as f64);
    let psi1 = psi1_ss(
        &x,
        &Matrix::zeros(8, layer.dim()),
        &layer.basis,
        &layer.hyper,
    )?;
    let phi = feature_matrix(&x, &layer.basis, &layer.hyper)?;
    let exact = psi1.as_slice() == phi.as_slice();
    Ok(CheckLine::new(
        "zero input variance reproduces the feature map",
        exact,
        format!("bitwise equal: {exact}"),
    ))
}

/// Runs every check; `samples` sets the Monte-Carlo budget per variant.
pub fn run_checks(samples: usize) -> Vec<CheckLine> {
    type Check<'a> = (&'a str, Box<dyn Fn() -> drgp_core::Result<CheckLine>>);
    let checks: Vec<Check> = vec![
        ("sampling", Box::new(move || check_sampling(samples))),
        ("tightness", Box::new(check_tightness)),
        ("gradient-ss", Box::new(|| check_gradient(Variant::Ss))),
        ("gradient-vss", Box::new(|| check_gradient(Variant::Vss))),
        ("parallel", Box::new(check_parallel)),
        ("limits", Box::new(check_limits)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| CheckLine::new(name, false, format!("error: {e}"))))
        .collect()
}
