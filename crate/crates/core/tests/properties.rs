mod common;

use common::*;
use drgp_core::data::{normalize, ScaleMode};
use drgp_core::engine::Serial;
use drgp_core::features::feature_matrix;
use drgp_core::params::ParamLayout;
use drgp_core::predictor::Predictor;
use drgp_core::psi::psi_stats;
use drgp_core::transform::{positive, positive_derivative};
use drgp_core::{Dataset, Matrix, ModelConfig, Variant};
use proptest::prelude::*;

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Ss), Just(Variant::Vss)]
}

fn sym_min_eig(a: &Matrix) -> f64 {
    let mut s = a.clone();
    let n = s.rows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    min_sym_eigenvalue(&s)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn flatten_round_trips_bitwise(seed in any::<u64>(), layers in 1usize..3, v in variant()) {
        let mut r = rng(seed);
        let data = random_series(&mut r, 20, 2);
        let model = random_model(&mut r, ModelConfig::new(layers, 2, 3, v, 2), &data);
        let layout = ParamLayout::full(&model);
        let flat = layout.flatten(&model).unwrap();
        let mut back = model.clone();
        back.layers.iter_mut().for_each(|l| l.basis.phase.iter_mut().for_each(|p| *p = 0.0));
        layout.unflatten(&mut back, &flat).unwrap();
        let again = layout.flatten(&back).unwrap();
        prop_assert!(flat.iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back, model);
    }

    #[test]
    fn positive_transform_is_increasing_and_differentiable(x in -20.0f64..20.0, dx in 1e-3f64..1.0) {
        prop_assert!(positive(x) > 0.0);
        prop_assert!(positive(x + dx) > positive(x));
        let h = 1e-6 * x.abs().max(1.0);
        let fd = (positive(x + h) - positive(x - h)) / (2.0 * h);
        let an = positive_derivative(x);
        prop_assert!((fd - an).abs() <= 1e-7 * an.abs().max(1e-300), "{fd} vs {an}");
    }

    #[test]
    fn normalisation_round_trips(seed in any::<u64>(), n in 3usize..40, q in 1usize..4, variance in any::<bool>()) {
        let mut r = rng(seed);
        let x = normal_matrix(&mut r, n, q, 3.0);
        let y = normal_matrix(&mut r, n, 1, 5.0).as_slice().iter().map(|v| v + 10.0).collect();
        let data = Dataset::new(x, y, vec![]).unwrap();
        let mode = if variance { ScaleMode::Variance } else { ScaleMode::StdDev };
        let (scaled, norm) = normalize(&data, mode).unwrap();
        let back = norm.invert(&scaled).unwrap();
        for (a, b) in back.inputs.as_slice().iter().zip(data.inputs.as_slice()).chain(back.outputs.iter().zip(&data.outputs)) {
            prop_assert!(rel_err(*a, *b) < 1e-12 || (a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_gram_is_positive_semidefinite(seed in any::<u64>(), n in 1usize..12, m in 1usize..10, q in 1usize..4) {
        let mut r = rng(seed);
        let layer = random_layer(&mut r, m, q, false);
        let x = normal_matrix(&mut r, n, q, 1.5);
        let phi = feature_matrix(&x, &layer.basis, &layer.hyper).unwrap();
        prop_assert!(sym_min_eig(&phi.matmul(&phi.transpose()).unwrap()) >= -1e-10);
    }

    #[test]
    fn psi_statistics_are_bounded_and_positive_semidefinite(
        seed in any::<u64>(), n in 1usize..6, m in 1usize..7, q in 1usize..4, v in variant(),
    ) {
        let mut r = rng(seed);
        let layer = random_layer(&mut r, m, q, v == Variant::Vss);
        let mean = normal_matrix(&mut r, n, q, 1.0);
        let var = uniform_matrix(&mut r, n, q, 0.0, 1.0);
        let stats = psi_stats(&mean, &var, &layer.basis, &layer.hyper, true).unwrap();
        let sp2 = layer.hyper.sigma_power().powi(2);
        let cap1 = (2.0 * sp2 / m as f64).sqrt() * (1.0 + 1e-12);
        let cap2 = 2.0 * sp2 / m as f64 * (1.0 + 1e-12);
        prop_assert!(stats.psi1.as_slice().iter().all(|e| e.abs() <= cap1));
        for one in stats.psi2_per_sample.as_ref().unwrap() {
            prop_assert!(one.as_slice().iter().all(|e| e.abs() <= cap2));
            prop_assert!(sym_min_eig(one) >= -1e-10);
        }
        prop_assert!(sym_min_eig(&stats.psi2) >= -1e-10);
    }

    #[test]
    fn predictive_variances_are_non_negative(seed in any::<u64>(), v in variant()) {
        let mut r = rng(seed);
        let data = random_series(&mut r, 30, 1);
        let model = random_model(&mut r, ModelConfig::new(1, 2, 4, v, 1), &data);
        let pred = Predictor::fit(&Serial, 1, &model, &data).unwrap();
        for layer in &pred.layers {
            let q = layer.spec.dim;
            let mean = normal_matrix(&mut r, 1, q, 1.0);
            let var = uniform_matrix(&mut r, 1, q, 0.0, 1.5);
            let (_, model_var) = layer.predict(mean.row(0), var.row(0)).unwrap();
            prop_assert!(model_var >= -1e-10, "model variance {model_var}");
        }
    }
}
