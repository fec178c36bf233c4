mod common;

use common::*;
use drgp_core::bound::{layer_stats, optimal_weight_posterior};
use drgp_core::engine::Serial;
use drgp_core::features::{feature_map, feature_matrix};
use drgp_core::linalg::dot;
use drgp_core::narx::build_narx;
use drgp_core::predictor::{free_simulate, LayerPredictor, Predictor, Warmup};
use drgp_core::psi::{psi_star, Spectrum};
use drgp_core::recurrent::RecurrentPlan;
use drgp_core::{LatentState, Matrix, ModelConfig, Variant};
use nalgebra::{DMatrix, DVector};

fn frozen_to_outputs(seed: u64, lags: usize) -> (drgp_core::DrgpModel, drgp_core::Dataset) {
    let mut r = rng(seed);
    let data = random_series(&mut r, 40, 1);
    let config = ModelConfig::new(1, lags, 5, Variant::Ss, 1);
    let mut model = random_model(&mut r, config, &data);
    let len = config.state_len(data.len());
    let mean: Vec<f64> = (0..len).map(|k| data.outputs[k]).collect();
    model.states[0] = LatentState::new(mean, &vec![1e-300; len]).unwrap();
    (model, data)
}

#[test]
fn deterministic_input_without_weight_uncertainty_has_zero_variance() {
    let mut r = rng(500);
    let layer = random_layer(&mut r, 6, 3, false);
    let spec = Spectrum::new(&layer.hyper, &layer.basis).unwrap();
    let p = LayerPredictor {
        spec,
        weight_mean: vec![0.4, -1.0, 0.3, 0.8, -0.2, 0.5],
        weight_cov: Matrix::zeros(6, 6),
        noise_var: 0.01,
    };
    let (_, v) = p.predict(&[0.2, -0.7, 1.3], &[0.0; 3]).unwrap();
    assert!(v.abs() < 1e-12);
    let (_, v) = p.predict(&[0.2, -0.7, 1.3], &[0.3, 0.1, 0.2]).unwrap();
    assert!(v >= -1e-10);
}

#[test]
fn empty_basis_predicts_zero() {
    let hyper = drgp_core::Hyperparams::new(1.0, 0.2, &[1.0, 1.0]).unwrap();
    let basis =
        drgp_core::SpectralBasis::new(Matrix::zeros(0, 2), Matrix::zeros(0, 2), vec![]).unwrap();
    let p = LayerPredictor {
        spec: Spectrum::new(&hyper, &basis).unwrap(),
        weight_mean: vec![],
        weight_cov: Matrix::zeros(0, 0),
        noise_var: 0.04,
    };
    assert_eq!(p.predict(&[0.1, 0.2], &[0.5, 0.5]).unwrap(), (0.0, 0.0));
}

#[test]
fn hidden_layer_predictive_is_bayesian_linear_regression() {
    let (model, data) = frozen_to_outputs(501, 3);
    let pred = Predictor::fit(&Serial, 1, &model, &data).unwrap();
    let design = build_narx(&data, 3, 3).unwrap();
    let layer = &model.layers[0];
    let phi = feature_matrix(&design.regressors, &layer.basis, &layer.hyper).unwrap();
    let s2 = layer.hyper.sigma_noise().powi(2);
    let f = DMatrix::from_row_slice(phi.rows(), phi.cols(), phi.as_slice());
    let mut k = &f * f.transpose();
    for i in 0..phi.rows() {
        k[(i, i)] += s2;
    }
    let kinv = k.try_inverse().unwrap();
    let y = DVector::from_column_slice(&design.targets);
    for x in [
        [0.1, -0.3, 0.5, 0.2, 0.0, -0.4],
        [1.0, 0.7, -0.2, 0.9, -1.1, 0.3],
    ] {
        let fs = DVector::from_vec(feature_map(&x, &layer.basis, &layer.hyper).unwrap());
        let ks = &f * &fs;
        let mean = (ks.transpose() * &kinv * &y)[0];
        let var = fs.dot(&fs) - (ks.transpose() * &kinv * &ks)[0];
        let (m, v) = pred.layers[0].predict(&x, &[0.0; 6]).unwrap();
        assert!(
            (m - mean).abs() <= 1e-8 * mean.abs().max(1.0),
            "{m} vs {mean}"
        );
        assert!((v - var).abs() <= 1e-8 * var.abs().max(1.0), "{v} vs {var}");
    }
}

#[test]
fn simulation_matches_a_hand_rolled_two_step_oracle() {
    let mut r = rng(502);
    let data = random_series(&mut r, 40, 2);
    let config = ModelConfig::new(1, 2, 5, Variant::Ss, 2);
    let model = random_model(&mut r, config, &data);
    let pred = Predictor::fit(&Serial, 1, &model, &data).unwrap();

    // Optimal posteriors through the batch path.
    let plan = RecurrentPlan::new(config, data.len()).unwrap();
    let stats = layer_stats(&model, &data, false).unwrap();
    let post: Vec<_> = (0..2)
        .map(|l| {
            let t = plan.layer_targets(l, &model, &data);
            let y = Matrix::from_vec(t.len(), 1, t).unwrap();
            optimal_weight_posterior(&stats[l], &y, model.layers[l].hyper.sigma_noise()).unwrap()
        })
        .collect();
    let moments = |l: usize, mean: &[f64], var: &[f64]| -> (f64, f64) {
        let layer = &model.layers[l];
        let spec = Spectrum::new(&layer.hyper, &layer.basis).unwrap();
        let (p1, p2) = psi_star(mean, var, &spec).unwrap();
        let m = post[l].mean.column(0);
        let mu = dot(&p1, &m);
        let quad = dot(&p2.mul_vec(&m).unwrap(), &m);
        let tr = post[l].cov.frobenius_dot(&p2);
        (mu, quad - mu * mu + tr + layer.hyper.sigma_noise().powi(2))
    };

    let exo = Matrix::from_fn(4, 2, |i, j| 0.3 * i as f64 - 0.2 * j as f64);
    let trace = free_simulate(&pred, &exo, Warmup::TrainTail).unwrap();
    assert_eq!(trace.len(), 2);

    let s = &model.states[0];
    let n = s.len();
    let mut hist = vec![(s.mean[n - 2], s.var(n - 2)), (s.mean[n - 1], s.var(n - 1))];
    for (step, t) in (2..4).enumerate() {
        let h1 = hist[hist.len() - 1];
        let h2 = hist[hist.len() - 2];
        let mean0 = [
            h1.0,
            h2.0,
            exo[(t - 1, 0)],
            exo[(t - 1, 1)],
            exo[(t - 2, 0)],
            exo[(t - 2, 1)],
        ];
        let var0 = [h1.1, h2.1, 0.0, 0.0, 0.0, 0.0];
        let (m0, v0) = moments(0, &mean0, &var0);
        hist.push((m0, v0));
        let (m1, v1) = moments(1, &[m0, h1.0], &[v0, h1.1]);
        assert!((trace.state_mean[step][0] - m0).abs() <= 1e-12);
        assert!((trace.state_var[step][0] - v0).abs() <= 1e-12);
        assert!((trace.output_mean[step] - m1).abs() <= 1e-12);
        assert!((trace.output_var[step] - v1).abs() <= 1e-12);
    }
}

#[test]
fn simulation_on_training_inputs_is_sane_and_deterministic() {
    for variant in [Variant::Ss, Variant::Vss] {
        let mut r = rng(503);
        let data = random_series(&mut r, 60, 2);
        let config = ModelConfig::new(2, 3, 6, variant, 2);
        let model = random_model(&mut r, config, &data);
        let pred = Predictor::fit(&Serial, 3, &model, &data).unwrap();
        for warmup in [Warmup::TrainTail, Warmup::Cold] {
            let a = free_simulate(&pred, &data.inputs, warmup).unwrap();
            let b = free_simulate(&pred, &data.inputs, warmup).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 57);
            for (step, vars) in a.state_var.iter().enumerate() {
                for (l, v) in vars.iter().enumerate() {
                    assert!(*v >= pred.layers[l].noise_var && a.state_mean[step][l].is_finite());
                }
            }
            assert!(a.output_var.iter().all(|v| *v >= pred.layers[2].noise_var));
            assert!(a.output_mean.iter().all(|v| v.is_finite()));
        }
        assert!(free_simulate(&pred, &Matrix::zeros(3, 2), Warmup::Cold).is_err());
    }
}

#[test]
fn infinite_lengthscales_give_a_constant_simulation() {
    let mut r = rng(504);
    let data = random_series(&mut r, 50, 1);
    let config = ModelConfig::new(2, 2, 4, Variant::Ss, 1);
    let mut model = random_model(&mut r, config, &data);
    for layer in &mut model.layers {
        for q in 0..layer.hyper.dim() {
            layer.hyper.set_lengthscale(q, 1e12).unwrap();
        }
    }
    let pred = Predictor::fit(&Serial, 1, &model, &data).unwrap();
    let exo = Matrix::from_fn(30, 1, |i, _| (i as f64).sin() * 3.0);
    let trace = free_simulate(&pred, &exo, Warmup::Cold).unwrap();
    let first = trace.output_mean[0];
    assert!(trace.output_mean.iter().all(|m| (m - first).abs() < 1e-9));
}
