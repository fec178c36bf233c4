mod common;

use common::*;
use drgp_core::narx::*;
use drgp_core::transform::{inverse_transform, positive};
use drgp_core::{Dataset, Hyperparams, LayerParams, Matrix, SpectralBasis};
use rand::Rng;
use rand_distr::StandardNormal;

/// Smooth noisy one-dimensional regression problem.
fn smooth(n: usize, noise: f64, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = rng(seed);
    let x = Matrix::from_fn(n, 1, |i, _| -3.0 + 6.0 * i as f64 / (n - 1) as f64);
    let y = (0..n)
        .map(|i| (1.3 * x[(i, 0)]).sin() + noise * r.sample::<f64, _>(StandardNormal))
        .collect();
    (x, y)
}

fn raw(sigma_power: f64, sigma_noise: f64, ls: &[f64]) -> Vec<f64> {
    let mut v = vec![
        inverse_transform(sigma_power).unwrap(),
        inverse_transform(sigma_noise).unwrap(),
    ];
    v.extend(ls.iter().map(|&l| inverse_transform(l).unwrap()));
    v
}

fn se_gram(x: &Matrix, sp: f64, ls: &[f64]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(x.rows(), x.rows(), |i, j| {
        let d: f64 = (0..x.cols())
            .map(|q| ((x[(i, q)] - x[(j, q)]) / ls[q]).powi(2))
            .sum();
        sp * sp * (-0.5 * d).exp()
    })
}

#[test]
fn full_gp_marginal_matches_the_dense_formula() {
    let mut r = rng(81);
    let x = normal_matrix(&mut r, 45, 3, 1.0);
    let y: Vec<f64> = (0..45).map(|_| r.sample(StandardNormal)).collect();
    let (sp, sn, ls) = (1.3, 0.4, [0.7, 1.5, 2.2]);
    let (value, _, _) = full_gp_log_marginal(&raw(sp, sn, &ls), &x, &y, false).unwrap();
    let mut k = se_gram(&x, sp, &ls);
    for i in 0..45 {
        k[(i, i)] += sn * sn;
    }
    let oracle = dense_log_gauss(&k, &y);
    assert!(rel_err(value, oracle) <= 1e-10, "{value} vs {oracle}");
}

fn fd_check(f: impl Fn(&[f64]) -> f64, x0: &[f64], grad: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x0.len() {
        let h = 1e-5 * x0[i].abs().max(1.0);
        let mut xp = x0.to_vec();
        xp[i] += h;
        let mut xm = x0.to_vec();
        xm[i] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        worst = worst.max((grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1.0));
    }
    worst
}

#[test]
fn full_gp_gradient_matches_finite_differences() {
    let mut r = rng(82);
    let x = normal_matrix(&mut r, 30, 2, 1.0);
    let y: Vec<f64> = (0..30).map(|_| r.sample(StandardNormal)).collect();
    let p = raw(0.9, 0.3, &[0.8, 1.7]);
    let (_, g, _) = full_gp_log_marginal(&p, &x, &y, true).unwrap();
    let worst = fd_check(
        |v| full_gp_log_marginal(v, &x, &y, false).unwrap().0,
        &p,
        &g.unwrap(),
    );
    assert!(worst <= 1e-6, "worst relative error {worst:.3e}");
}

#[test]
fn sparse_spectrum_gradient_matches_finite_differences() {
    let mut r = rng(83);
    let x = normal_matrix(&mut r, 35, 2, 1.0);
    let y: Vec<f64> = (0..35).map(|_| r.sample(StandardNormal)).collect();
    let mut layer = random_layer(&mut r, 7, 2, false);
    layer.basis.pseudo = Matrix::zeros(7, 2);
    let (_, g, _) = ssgp_log_marginal(&layer, &x, &y, true).unwrap();
    let q = 2;
    let pack = |l: &LayerParams| {
        let mut v = raw(
            l.hyper.sigma_power(),
            l.hyper.sigma_noise(),
            &l.hyper.lengthscales(),
        );
        v.extend_from_slice(l.basis.freq.as_slice());
        v
    };
    let x0 = pack(&layer);
    let f = |v: &[f64]| {
        let mut l = layer.clone();
        l.hyper.set_sigma_power(positive(v[0])).unwrap();
        l.hyper.set_sigma_noise(positive(v[1])).unwrap();
        for k in 0..q {
            l.hyper.set_lengthscale(k, positive(v[2 + k])).unwrap();
        }
        l.basis.freq.as_mut_slice().copy_from_slice(&v[2 + q..]);
        ssgp_log_marginal(&l, &x, &y, false).unwrap().0
    };
    let worst = fd_check(f, &x0, &g.unwrap());
    assert!(worst <= 1e-6, "worst relative error {worst:.3e}");
}

#[test]
fn sparse_spectrum_with_many_features_interpolates() {
    let (x, y) = smooth(30, 0.0, 84);
    let mut r = rng(85);
    let m = 60;
    let hyper = Hyperparams::new(1.0, 1e-4, &[0.5]).unwrap();
    let phase = (0..m)
        .map(|_| r.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let basis =
        SpectralBasis::new(normal_matrix(&mut r, m, 1, 1.0), Matrix::zeros(m, 1), phase).unwrap();
    let layer = LayerParams { hyper, basis };
    let (_, _, weight_mean) = ssgp_log_marginal(&layer, &x, &y, false).unwrap();
    let model = SsgpNarx {
        layer,
        weight_mean,
        log_marginal: 0.0,
    };
    let pred: Vec<f64> = (0..30)
        .map(|i| model.predict_mean(x.row(i)).unwrap())
        .collect();
    let err = drgp_core::data::rmse(&pred, &y).unwrap();
    assert!(err < 1e-3, "train rmse {err}");
}

#[test]
fn full_gp_interpolates_as_noise_vanishes() {
    let (x, y) = smooth(25, 0.05, 86);
    let mut last = f64::INFINITY;
    for sn in [1e-1, 1e-2, 1e-3] {
        let p = raw(1.0, sn, &[0.3]);
        let (log_marginal, _, weights) = full_gp_log_marginal(&p, &x, &y, false).unwrap();
        let model = FullGpNarx {
            raw: p,
            train: x.clone(),
            weights,
            log_marginal,
        };
        let err = (model.predict_mean(x.row(12)).unwrap() - y[12]).abs();
        assert!(err < last, "error {err} did not shrink from {last}");
        last = err;
    }
    assert!(last < 1e-3, "residual {last} at the smallest noise");
}

/// Normal quantile by bisection on the error function.
fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 0.5 * (1.0 + libm::erf(mid / std::f64::consts::SQRT_2)) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn sparse_spectrum_agrees_with_the_full_gp_when_the_gram_matches() {
    // Paired cosine and sine features at normal quantile frequencies give a
    // Gram matrix that is a quadrature of the squared exponential kernel.
    let (x, y) = smooth(30, 0.1, 87);
    let (sp, sn, ls) = (1.1, 0.3, 2.5);
    let pairs = 1000;
    let m = 2 * pairs;
    let freq = Matrix::from_fn(m, 1, |i, _| {
        normal_quantile((((i / 2) as f64) + 0.5) / pairs as f64)
    });
    let phase = (0..m)
        .map(|i| {
            if i % 2 == 0 {
                0.0
            } else {
                std::f64::consts::FRAC_PI_2
            }
        })
        .collect();
    let basis = SpectralBasis::new(freq, Matrix::zeros(m, 1), phase).unwrap();
    let layer = LayerParams {
        hyper: Hyperparams::new(sp, sn, &[ls]).unwrap(),
        basis,
    };

    let phi = drgp_core::features::feature_matrix(&x, &layer.basis, &layer.hyper).unwrap();
    let gram = phi.matmul(&phi.transpose()).unwrap();
    let exact = se_gram(&x, sp, &[ls]);
    let mut eps = 0.0f64;
    for i in 0..30 {
        for j in 0..30 {
            eps = eps.max((gram[(i, j)] - exact[(i, j)]).abs());
        }
    }
    assert!(eps <= 1e-3, "gram error {eps}");

    let (_, _, weight_mean) = ssgp_log_marginal(&layer, &x, &y, false).unwrap();
    let ss = SsgpNarx {
        layer,
        weight_mean,
        log_marginal: 0.0,
    };
    let p = raw(sp, sn, &[ls]);
    let (log_marginal, _, weights) = full_gp_log_marginal(&p, &x, &y, false).unwrap();
    let full = FullGpNarx {
        raw: p,
        train: x.clone(),
        weights,
        log_marginal,
    };

    // Perturbation bound for the predictive mean when every kernel entry
    // (train and cross) moves by at most eps.
    let n = 30.0f64;
    let s2 = sn * sn;
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let k_star = sp * sp * n.sqrt();
    let bound = (n.sqrt() * eps / s2 + k_star * n * eps / (s2 * s2)) * y_norm;
    let mut worst = 0.0f64;
    for t in [-2.7, -1.1, 0.0, 0.4, 2.3] {
        let row = [t];
        worst =
            worst.max((ss.predict_mean(&row).unwrap() - full.predict_mean(&row).unwrap()).abs());
    }
    assert!(worst <= bound, "difference {worst} exceeds bound {bound}");
    assert!(worst <= 1e-2, "difference {worst}");
}

#[test]
fn fitting_raises_the_marginal_likelihood() {
    let mut r = rng(88);
    let n = 80;
    let x = Matrix::from_fn(n, 1, |i, _| {
        (0.2 * i as f64).sin() + 0.1 * r.sample::<f64, _>(StandardNormal)
    });
    let mut y = vec![0.0; n];
    for i in 1..n {
        y[i] = 0.6 * y[i - 1]
            + (1.5 * x[(i - 1, 0)]).tanh()
            + 0.05 * r.sample::<f64, _>(StandardNormal);
    }
    let data = Dataset::new(x, y, vec![]).unwrap();
    let design = build_narx(&data, 1, 1).unwrap();

    let start = raw(1.0, 0.1, &[1.0, 1.0]);
    let before = full_gp_log_marginal(&start, &design.regressors, &design.targets, false)
        .unwrap()
        .0;
    let full = fit_gp_full_narx(&design, 100).unwrap();
    assert!(full.log_marginal > before);

    let ss = fit_gp_ss_narx(&design, 20, 3, 100).unwrap();
    let pred: Vec<f64> = (0..design.targets.len())
        .map(|i| ss.predict_mean(design.regressors.row(i)).unwrap())
        .collect();
    let err = drgp_core::data::rmse(&pred, &design.targets).unwrap();
    assert!(err < 0.1, "one-step train rmse {err}");
    assert_eq!(ss.layer.basis.features(), 20);
}

struct Linear(Vec<f64>);

impl NarxRegressor for Linear {
    fn predict_mean(&self, row: &[f64]) -> drgp_core::Result<f64> {
        Ok(row.iter().zip(&self.0).map(|(a, b)| a * b).sum())
    }
}

#[test]
fn simulation_feeds_back_its_own_predictions() {
    let model = Linear(vec![0.5, -0.2, 1.0, 0.3, 0.1, -0.4]);
    let exo = Matrix::from_fn(8, 2, |i, j| {
        (i as f64 + 1.0) * if j == 0 { 0.1 } else { -0.2 }
    });
    let past = [9.0, 1.0, 2.0];
    let out = simulate_narx(&model, 2, 2, &past, &exo).unwrap();
    assert_eq!(out.len(), 6);
    let mut ys = vec![1.0, 2.0];
    for t in 2..8 {
        let k = ys.len();
        let v = 0.5 * ys[k - 1] - 0.2 * ys[k - 2]
            + 1.0 * exo[(t - 1, 0)]
            + 0.3 * exo[(t - 1, 1)]
            + 0.1 * exo[(t - 2, 0)]
            - 0.4 * exo[(t - 2, 1)];
        ys.push(v);
    }
    for (a, b) in out.iter().zip(&ys[2..]) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(simulate_narx(&model, 2, 2, &[1.0], &exo).is_err());
    assert!(simulate_narx(&model, 2, 2, &past, &Matrix::zeros(2, 2)).is_err());

    let exo_only = Linear(vec![1.0, 1.0]);
    let out = simulate_narx(&exo_only, 0, 1, &[], &exo).unwrap();
    assert!((out[0] - (exo[(0, 0)] + exo[(0, 1)])).abs() <= 1e-15);
}
