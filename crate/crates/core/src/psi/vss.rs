//! Gaussian spectral points with randomised phases.
//!
//! Every entry of Ψ₁ and Ψ₂ⁿ is a sum of terms `E cos(Σ_j c_j ωⱼᵀ(h - u_j) + φ)`
//! with independent `ω_j ~ N(a_j, diag B_j)` and `h ~ N(μ, diag λ)`. Taking
//! the expectation over the frequencies first leaves a Gaussian integral in
//! `h` that factorises over input dimensions. Writing
//!
//! * `P = Σ c_j² B_j`,
//! * `J = Σ c_j² B_j u_j + i Σ c_j a_j`,
//! * `K = -½ Σ c_j² B_j u_j² - i Σ c_j a_j u_j`,
//!
//! one dimension contributes the complex log-factor
//! `s = -½ log(1 + Pλ) + (2μJ + λJ² - Pμ²) / (2(1 + Pλ)) + K`,
//! and the term equals `Re exp(Σ s + iφ)`. Nothing here divides by `B`, so the
//! limit of vanishing spectral variance is exact.

use super::{exp_clamped, Spectrum, SpectrumGrad};

#[derive(Clone, Copy)]
struct Part {
    feature: usize,
    coef: f64,
}

#[derive(Clone, Copy)]
struct Cx {
    re: f64,
    im: f64,
}

impl Cx {
    #[inline]
    fn mul(self, o: Cx) -> Cx {
        Cx {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

/// Per-dimension coefficients of the quadratic exponent in `h`.
struct Coeffs {
    p: f64,
    j: Cx,
    k: Cx,
}

#[inline]
fn coeffs(spec: &Spectrum, bvar: &[f64], parts: &[Part], q: usize) -> Coeffs {
    let d = spec.dim;
    let mut c = Coeffs {
        p: 0.0,
        j: Cx { re: 0.0, im: 0.0 },
        k: Cx { re: 0.0, im: 0.0 },
    };
    for part in parts {
        let idx = part.feature * d + q;
        let (b, u, a) = (bvar[idx], spec.pseudo[idx], spec.freq[idx]);
        let c2b = part.coef * part.coef * b;
        c.p += c2b;
        c.j.re += c2b * u;
        c.j.im += part.coef * a;
        c.k.re -= 0.5 * c2b * u * u;
        c.k.im -= part.coef * a * u;
    }
    c
}

/// `2μJ + λJ² - Pμ²`.
#[inline]
fn numerator(c: &Coeffs, mu: f64, lam: f64) -> Cx {
    let j2 = c.j.mul(c.j);
    Cx {
        re: 2.0 * mu * c.j.re + lam * j2.re - c.p * mu * mu,
        im: 2.0 * mu * c.j.im + lam * j2.im,
    }
}

fn exponent(spec: &Spectrum, bvar: &[f64], mean: &[f64], var: &[f64], parts: &[Part]) -> Cx {
    let mut s = Cx { re: 0.0, im: 0.0 };
    for q in 0..spec.dim {
        let c = coeffs(spec, bvar, parts, q);
        let (mu, lam) = (mean[q], var[q]);
        let pl = c.p * lam;
        let d = 1.0 + pl;
        let n = numerator(&c, mu, lam);
        s.re += -0.5 * libm::log1p(pl) + n.re / (2.0 * d) + c.k.re;
        s.im += n.im / (2.0 * d) + c.k.im;
    }
    s
}

#[inline]
fn term(
    spec: &Spectrum,
    bvar: &[f64],
    mean: &[f64],
    var: &[f64],
    parts: &[Part],
    phase: f64,
) -> f64 {
    let s = exponent(spec, bvar, mean, var, parts);
    exp_clamped(s.re) * libm::cos(s.im + phase)
}

/// Adds the derivatives of `weight · Re exp(S + iφ)`.
#[allow(clippy::too_many_arguments)]
fn term_backward(
    spec: &Spectrum,
    bvar: &[f64],
    mean: &[f64],
    var: &[f64],
    parts: &[Part],
    phase: f64,
    weight: f64,
    grad: &mut SpectrumGrad,
    dmean: &mut [f64],
    dvar: &mut [f64],
) {
    let s = exponent(spec, bvar, mean, var, parts);
    let mag = weight * exp_clamped(s.re);
    let g = Cx {
        re: mag * libm::cos(s.im + phase),
        im: mag * libm::sin(s.im + phase),
    };
    let gvar = grad.freq_var.as_mut().expect("variational gradient buffer");
    let dim = spec.dim;
    for q in 0..dim {
        let c = coeffs(spec, bvar, parts, q);
        let (mu, lam) = (mean[q], var[q]);
        let d = 1.0 + c.p * lam;
        let n = numerator(&c, mu, lam);
        let inv = 1.0 / d;
        let half = 0.5 * inv;
        let ds_dj = Cx {
            re: (mu + lam * c.j.re) * inv,
            im: lam * c.j.im * inv,
        };
        let ds_dmu = Cx {
            re: (c.j.re - c.p * mu) * inv,
            im: c.j.im * inv,
        };
        let j2 = c.j.mul(c.j);
        let ds_dlam = Cx {
            re: -c.p * half + j2.re * half - n.re * c.p * half * inv,
            im: j2.im * half - n.im * c.p * half * inv,
        };
        let ds_dp = Cx {
            re: -lam * half - mu * mu * half - n.re * lam * half * inv,
            im: -n.im * lam * half * inv,
        };
        dmean[q] += g.mul(ds_dmu).re;
        dvar[q] += g.mul(ds_dlam).re;
        let g_dj = g.mul(ds_dj);
        let g_dp = g.mul(ds_dp);
        for part in parts {
            let idx = part.feature * dim + q;
            let (b, u, a) = (bvar[idx], spec.pseudo[idx], spec.freq[idx]);
            let c1 = part.coef;
            let c2 = c1 * c1;
            gvar[idx] += c2 * (g_dp.re + u * g_dj.re - 0.5 * u * u * g.re);
            grad.pseudo[idx] += c2 * b * (g_dj.re - u * g.re) + c1 * a * g.im;
            grad.freq[idx] += -c1 * g_dj.im + c1 * u * g.im;
        }
    }
    for part in parts {
        grad.phase[part.feature] -= part.coef * g.im;
    }
}

pub(super) fn psi1_row(spec: &Spectrum, bvar: &[f64], mean: &[f64], var: &[f64], out: &mut [f64]) {
    let amp = spec.amp1();
    for m in 0..spec.features {
        let parts = [Part {
            feature: m,
            coef: 1.0,
        }];
        out[m] = amp * term(spec, bvar, mean, var, &parts, spec.phase[m]);
    }
}

fn pair_parts(a: usize, b: usize) -> ([Part; 2], [Part; 2]) {
    (
        [
            Part {
                feature: a,
                coef: 1.0,
            },
            Part {
                feature: b,
                coef: -1.0,
            },
        ],
        [
            Part {
                feature: a,
                coef: 1.0,
            },
            Part {
                feature: b,
                coef: 1.0,
            },
        ],
    )
}

pub(super) fn psi2_add(spec: &Spectrum, bvar: &[f64], mean: &[f64], var: &[f64], acc: &mut [f64]) {
    let m = spec.features;
    let amp = spec.amp2();
    let ph = &spec.phase;
    for a in 0..m {
        let diag = [Part {
            feature: a,
            coef: 2.0,
        }];
        acc[a * m + a] += amp * (1.0 + term(spec, bvar, mean, var, &diag, 2.0 * ph[a]));
        for b in a + 1..m {
            let (minus, plus) = pair_parts(a, b);
            let v = amp
                * (term(spec, bvar, mean, var, &minus, ph[a] - ph[b])
                    + term(spec, bvar, mean, var, &plus, ph[a] + ph[b]));
            acc[a * m + b] += v;
            acc[b * m + a] += v;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    spec: &Spectrum,
    bvar: &[f64],
    mean: &[f64],
    var: &[f64],
    g1: &[f64],
    g2: &[f64],
    grad: &mut SpectrumGrad,
    dmean: &mut [f64],
    dvar: &mut [f64],
) {
    let m = spec.features;
    let ph = &spec.phase;
    let amp1 = spec.amp1();
    for a in 0..m {
        if g1[a] != 0.0 {
            let parts = [Part {
                feature: a,
                coef: 1.0,
            }];
            term_backward(
                spec,
                bvar,
                mean,
                var,
                &parts,
                ph[a],
                g1[a] * amp1,
                grad,
                dmean,
                dvar,
            );
        }
    }
    let amp2 = spec.amp2();
    for a in 0..m {
        let wd = g2[a * m + a];
        if wd != 0.0 {
            let diag = [Part {
                feature: a,
                coef: 2.0,
            }];
            term_backward(
                spec,
                bvar,
                mean,
                var,
                &diag,
                2.0 * ph[a],
                wd * amp2,
                grad,
                dmean,
                dvar,
            );
        }
        for b in a + 1..m {
            let w = g2[a * m + b] + g2[b * m + a];
            if w == 0.0 {
                continue;
            }
            let (minus, plus) = pair_parts(a, b);
            term_backward(
                spec,
                bvar,
                mean,
                var,
                &minus,
                ph[a] - ph[b],
                w * amp2,
                grad,
                dmean,
                dvar,
            );
            term_backward(
                spec,
                bvar,
                mean,
                var,
                &plus,
                ph[a] + ph[b],
                w * amp2,
                grad,
                dmean,
                dvar,
            );
        }
    }
}
