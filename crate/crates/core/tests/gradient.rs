mod common;

use common::*;
use drgp_core::bound::revarb_objective;
use drgp_core::engine::revarb_gradient;
use drgp_core::params::ParamLayout;
use drgp_core::{ModelConfig, Variant};

fn check(variant: Variant, seed: u64) {
    let mut r = rng(seed);
    let data = random_series(&mut r, 40, 1);
    let config = ModelConfig::new(2, 2, 5, variant, 1);
    let model = random_model(&mut r, config, &data);
    let layout = ParamLayout::full(&model);
    let x0 = layout.flatten(&model).unwrap();
    let grad = revarb_gradient(&model, &data).unwrap();
    let f = |x: &[f64]| {
        let mut m = model.clone();
        layout.unflatten(&mut m, x).unwrap();
        revarb_objective(&m, &data).unwrap().total
    };
    let mut worst = 0.0f64;
    for slot in layout.slots() {
        let mut group_worst = 0.0f64;
        for i in slot.offset..slot.offset + slot.len {
            let h = 1e-5 * x0[i].abs().max(1.0);
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let err = (grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1.0);
            group_worst = group_worst.max(err);
        }
        println!("{:?} {:?}: {group_worst:.3e}", variant, slot.key);
        worst = worst.max(group_worst);
    }
    assert!(
        worst <= 1e-4,
        "{variant:?}: worst relative error {worst:.3e}"
    );
}

#[test]
fn gradient_matches_finite_differences_ss() {
    check(Variant::Ss, 11);
}

#[test]
fn gradient_matches_finite_differences_vss() {
    check(Variant::Vss, 12);
}

fn paired_entries(variant: Variant, seed: u64) -> (Vec<f64>, drgp_core::DrgpModel, ParamLayout) {
    let mut r = rng(seed);
    let data = random_series(&mut r, 30, 1);
    let config = ModelConfig::new(1, 2, 4, variant, 1);
    let mut model = random_model(&mut r, config, &data);
    for layer in &mut model.layers {
        let b = &mut layer.basis;
        let q = b.dim();
        for j in 0..q {
            b.freq[(1, j)] = b.freq[(0, j)];
            b.pseudo[(1, j)] = b.pseudo[(0, j)];
        }
        b.phase[1] = b.phase[0];
        if let Some(var) = b.variances() {
            let mut v = var.clone();
            for j in 0..q {
                v[(1, j)] = var[(0, j)];
            }
            *b = b.clone().with_variances(&v).unwrap();
        }
    }
    let grad = revarb_gradient(&model, &data).unwrap();
    let layout = ParamLayout::full(&model);
    (grad, model, layout)
}

#[test]
fn duplicated_basis_elements_get_equal_gradients() {
    use drgp_core::params::ParamGroup;
    for (variant, seed) in [(Variant::Ss, 21), (Variant::Vss, 22)] {
        let (grad, model, layout) = paired_entries(variant, seed);
        for slot in layout.slots() {
            let per_row = match slot.key.group {
                ParamGroup::Frequency | ParamGroup::FrequencyVar | ParamGroup::Pseudo => {
                    model.layers[slot.key.layer].dim()
                }
                ParamGroup::Phase => 1,
                _ => continue,
            };
            let g = &grad[slot.offset..slot.offset + slot.len];
            for j in 0..per_row {
                let (a, b) = (g[j], g[per_row + j]);
                assert!(
                    (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1.0),
                    "{variant:?} {:?} column {j}: {a} vs {b}",
                    slot.key
                );
            }
        }
    }
}

#[test]
fn frozen_groups_are_left_out_of_the_gradient() {
    use drgp_core::params::ParamGroup;
    let mut r = rng(23);
    let data = random_series(&mut r, 30, 1);
    let config = ModelConfig::new(2, 2, 4, Variant::Vss, 1);
    let model = random_model(&mut r, config, &data);
    let full = ParamLayout::full(&model);
    let frozen = |k: drgp_core::params::GroupKey| {
        matches!(k.group, ParamGroup::Phase | ParamGroup::FrequencyVar)
    };
    let layout = ParamLayout::excluding(&model, frozen);
    let dropped: usize = full
        .slots()
        .iter()
        .filter(|s| frozen(s.key))
        .map(|s| s.len)
        .sum();
    assert_eq!(layout.len(), full.len() - dropped);
    assert!(layout.slots().iter().all(|s| !frozen(s.key)));

    let grad = layout
        .restrict(&full, &revarb_gradient(&model, &data).unwrap())
        .unwrap();
    assert_eq!(grad.len(), layout.len());
    let x0 = layout.flatten(&model).unwrap();
    let f = |x: &[f64]| {
        let mut m = model.clone();
        layout.unflatten(&mut m, x).unwrap();
        revarb_objective(&m, &data).unwrap().total
    };
    for i in (0..x0.len()).step_by(7) {
        let h = 1e-5 * x0[i].abs().max(1.0);
        let mut xp = x0.clone();
        xp[i] += h;
        let mut xm = x0.clone();
        xm[i] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        assert!(
            (grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1.0) <= 1e-4,
            "entry {i}"
        );
    }
}
