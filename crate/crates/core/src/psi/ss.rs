//! Fixed spectral points.
//!
//! With deterministic frequencies every expectation is a damped cosine:
//! `E cos(ωᵀh + c) = exp(-½ ωᵀΛω) cos(ωᵀμ + c)`. Second moments pair two
//! features through `cos(θ_m ∓ θ_m')`, whose damping exponents share the
//! cross term `C_mm' = Σ_q λ_q ω_mq ω_m'q`.

use alloc::vec;
use alloc::vec::Vec;

use super::{exp_clamped, Spectrum, SpectrumGrad};

struct Phases {
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// `Σ_q λ_q ω_mq²`.
    damp: Vec<f64>,
    active: Vec<usize>,
}

fn phases(spec: &Spectrum, mean: &[f64], var: &[f64]) -> Phases {
    let (m, q) = (spec.features, spec.dim);
    let active: Vec<usize> = (0..q).filter(|&j| var[j] != 0.0).collect();
    let mut theta = Vec::with_capacity(m);
    let mut damp = Vec::with_capacity(m);
    for i in 0..m {
        let w = &spec.freq[i * q..(i + 1) * q];
        let u = &spec.pseudo[i * q..(i + 1) * q];
        let mut t = spec.phase[i];
        for j in 0..q {
            t += w[j] * (mean[j] - u[j]);
        }
        theta.push(t);
        damp.push(active.iter().map(|&j| var[j] * w[j] * w[j]).sum());
    }
    let cos = theta.iter().map(|&t| libm::cos(t)).collect();
    let sin = theta.iter().map(|&t| libm::sin(t)).collect();
    Phases {
        cos,
        sin,
        damp,
        active,
    }
}

#[inline]
fn cross(spec: &Spectrum, var: &[f64], active: &[usize], a: usize, b: usize) -> f64 {
    let q = spec.dim;
    let (wa, wb) = (
        &spec.freq[a * q..(a + 1) * q],
        &spec.freq[b * q..(b + 1) * q],
    );
    active.iter().map(|&j| var[j] * wa[j] * wb[j]).sum()
}

pub(super) fn psi1_row(spec: &Spectrum, mean: &[f64], var: &[f64], out: &mut [f64]) {
    let p = phases(spec, mean, var);
    let amp = spec.amp1();
    for i in 0..spec.features {
        out[i] = amp * exp_clamped(-0.5 * p.damp[i]) * p.cos[i];
    }
}

/// Damping factors of the difference and sum frequencies of a pair.
#[inline]
fn pair_damping(p: &Phases, c: f64, a: usize, b: usize) -> (f64, f64) {
    let s = p.damp[a] + p.damp[b];
    (
        exp_clamped(-0.5 * (s - 2.0 * c)),
        exp_clamped(-0.5 * (s + 2.0 * c)),
    )
}

pub(super) fn psi2_add(spec: &Spectrum, mean: &[f64], var: &[f64], acc: &mut [f64]) {
    let m = spec.features;
    let p = phases(spec, mean, var);
    let amp = spec.amp2();
    for a in 0..m {
        for b in a..m {
            let c = if p.active.is_empty() {
                0.0
            } else {
                cross(spec, var, &p.active, a, b)
            };
            let (e_minus, e_plus) = pair_damping(&p, c, a, b);
            let cc = p.cos[a] * p.cos[b];
            let sss = p.sin[a] * p.sin[b];
            let v = amp * (e_minus * (cc + sss) + e_plus * (cc - sss));
            acc[a * m + b] += v;
            if a != b {
                acc[b * m + a] += v;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    spec: &Spectrum,
    mean: &[f64],
    var: &[f64],
    g1: &[f64],
    g2: &[f64],
    grad: &mut SpectrumGrad,
    dmean: &mut [f64],
    dvar: &mut [f64],
) {
    let (m, q) = (spec.features, spec.dim);
    let p = phases(spec, mean, var);
    let mut d_theta = vec![0.0; m];
    let mut d_damp = vec![0.0; m];

    let amp1 = spec.amp1();
    for i in 0..m {
        let e = exp_clamped(-0.5 * p.damp[i]);
        d_damp[i] -= 0.5 * g1[i] * amp1 * e * p.cos[i];
        d_theta[i] -= g1[i] * amp1 * e * p.sin[i];
    }

    let amp2 = spec.amp2();
    for a in 0..m {
        for b in a..m {
            let w = if a == b {
                g2[a * m + a]
            } else {
                g2[a * m + b] + g2[b * m + a]
            };
            if w == 0.0 {
                continue;
            }
            let c = if p.active.is_empty() {
                0.0
            } else {
                cross(spec, var, &p.active, a, b)
            };
            let (e_minus, e_plus) = pair_damping(&p, c, a, b);
            let cc = p.cos[a] * p.cos[b];
            let sss = p.sin[a] * p.sin[b];
            let (cos_minus, cos_plus) = (cc + sss, cc - sss);
            let sc = p.sin[a] * p.cos[b];
            let cs = p.cos[a] * p.sin[b];
            let (sin_minus, sin_plus) = (sc - cs, sc + cs);

            let value = amp2 * (e_minus * cos_minus + e_plus * cos_plus);
            d_damp[a] -= 0.5 * w * value;
            d_damp[b] -= 0.5 * w * value;
            d_theta[a] += w * amp2 * (-e_minus * sin_minus - e_plus * sin_plus);
            d_theta[b] += w * amp2 * (e_minus * sin_minus - e_plus * sin_plus);

            let d_cross = w * amp2 * (e_minus * cos_minus - e_plus * cos_plus);
            if d_cross != 0.0 {
                for &j in &p.active {
                    let (wa, wb) = (spec.freq[a * q + j], spec.freq[b * q + j]);
                    dvar[j] += d_cross * wa * wb;
                    grad.freq[a * q + j] += d_cross * var[j] * wb;
                    grad.freq[b * q + j] += d_cross * var[j] * wa;
                }
            }
        }
    }

    for i in 0..m {
        let w = &spec.freq[i * q..(i + 1) * q];
        let u = &spec.pseudo[i * q..(i + 1) * q];
        for &j in &p.active {
            dvar[j] += d_damp[i] * w[j] * w[j];
            grad.freq[i * q + j] += 2.0 * d_damp[i] * var[j] * w[j];
        }
        let dt = d_theta[i];
        for j in 0..q {
            dmean[j] += dt * w[j];
            grad.freq[i * q + j] += dt * (mean[j] - u[j]);
            grad.pseudo[i * q + j] -= dt * w[j];
        }
        grad.phase[i] += dt;
    }
}
