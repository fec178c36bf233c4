//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! The line search is the bracketing/zoom scheme with safeguarded cubic
//! interpolation. Every accepted step satisfies the sufficient decrease
//! condition, so recorded objective values never increase.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the gradient's Euclidean norm drops below this.
    pub grad_tol: f64,
    /// Sufficient decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 100,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
    NonFinite,
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Minimises `f`, which returns `(value, gradient)`. A `None` from `f` marks
/// an infeasible point, which the line search treats as a failed trial.
/// `on_step` is called after the initial point and after every accepted step.
pub fn minimize<F, C>(mut f: F, x0: Vec<f64>, cfg: &LbfgsConfig, mut on_step: C) -> Option<Outcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    C: FnMut(&Step),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut evaluations = 1;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    on_step(&Step {
        iteration: 0,
        value: fx,
        grad_norm: norm(&g),
        evaluations,
    });
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        if norm(&g) < cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut d = direction(&g, &pairs);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let init = if pairs.is_empty() {
            (1.0 / norm(&g)).min(1.0)
        } else {
            1.0
        };
        let search = line_search(&mut f, &x, fx, slope, &d, init, cfg);
        evaluations += search.evaluations;
        let Some((alpha, f_new, g_new)) = search.accepted else {
            termination = if search.non_finite {
                Termination::NonFinite
            } else {
                Termination::LineSearchFailed
            };
            break;
        };
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        axpy(1.0, &s, &mut x);
        fx = f_new;
        g = g_new;
        iterations += 1;
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        on_step(&Step {
            iteration: iterations,
            value: fx,
            grad_norm: norm(&g),
            evaluations,
        });
    }
    if termination == Termination::MaxIterations && norm(&g) < cfg.grad_tol {
        termination = Termination::GradientTolerance;
    }
    Some(Outcome {
        x,
        value: fx,
        grad: g,
        iterations,
        evaluations,
        termination,
    })
}

/// Two-loop recursion for `-H g`.
fn direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[i] = a;
        axpy(-a, y, &mut q);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (i, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &q);
        axpy(alphas[i] - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Search {
    accepted: Option<(f64, f64, Vec<f64>)>,
    evaluations: usize,
    non_finite: bool,
}

#[derive(Clone)]
struct Trial {
    alpha: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

/// Minimiser of the cubic through two trials, clamped into the bracket.
fn cubic(a: &Trial, b: &Trial) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha {
        (a.alpha, b.alpha)
    } else {
        (b.alpha, a.alpha)
    };
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    let mid = 0.5 * (lo + hi);
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = libm::copysign(libm::sqrt(disc), b.alpha - a.alpha);
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if !t.is_finite() || t < lo + margin || t > hi - margin {
        mid
    } else {
        t
    }
}

fn line_search<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    init: f64,
    cfg: &LbfgsConfig,
) -> Search
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut evaluations = 0;
    let mut non_finite = false;
    let mut eval = |alpha: f64, evaluations: &mut usize, non_finite: &mut bool| -> Option<Trial> {
        *evaluations += 1;
        let mut xt = x.to_vec();
        axpy(alpha, d, &mut xt);
        match f(&xt) {
            Some((v, g)) if v.is_finite() && g.iter().all(|e| e.is_finite()) => Some(Trial {
                alpha,
                value: v,
                slope: dot(&g, d),
                grad: g,
            }),
            _ => {
                *non_finite = true;
                None
            }
        }
    };
    let start = Trial {
        alpha: 0.0,
        value: f0,
        slope: slope0,
        grad: Vec::new(),
    };
    let mut prev = start.clone();
    let mut alpha = init;
    let accept = |t: &Trial| (t.alpha, t.value, t.grad.clone());
    let armijo = |t: &Trial| t.value <= f0 + cfg.c1 * t.alpha * slope0;
    let curvature = |t: &Trial| libm::fabs(t.slope) <= -cfg.c2 * slope0;
    let mut bracket: Option<(Trial, Trial)> = None;
    for i in 0..cfg.max_line_evals {
        let Some(t) = eval(alpha, &mut evaluations, &mut non_finite) else {
            // Infeasible trial: shrink towards the last good point.
            alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
            if alpha - prev.alpha < 1e-16 {
                break;
            }
            continue;
        };
        if !armijo(&t) || (i > 0 && t.value >= prev.value) {
            bracket = Some((prev.clone(), t));
            break;
        }
        if curvature(&t) {
            return Search {
                accepted: Some(accept(&t)),
                evaluations,
                non_finite: false,
            };
        }
        if t.slope >= 0.0 {
            bracket = Some((t, prev.clone()));
            break;
        }
        prev = t;
        alpha *= 2.0;
    }
    let Some((mut lo, mut hi)) = bracket else {
        // Extrapolation ran out of budget; keep the best sufficient-decrease point.
        let accepted = (prev.alpha > 0.0).then(|| accept(&prev));
        return Search {
            accepted,
            evaluations,
            non_finite,
        };
    };
    while evaluations < cfg.max_line_evals {
        let a = cubic(&lo, &hi);
        let Some(t) = eval(a, &mut evaluations, &mut non_finite) else {
            hi = Trial {
                alpha: a,
                value: f64::INFINITY,
                slope: 0.0,
                grad: Vec::new(),
            };
            continue;
        };
        if !armijo(&t) || t.value >= lo.value {
            hi = t;
        } else {
            if curvature(&t) {
                return Search {
                    accepted: Some(accept(&t)),
                    evaluations,
                    non_finite: false,
                };
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
        if libm::fabs(hi.alpha - lo.alpha) < 1e-14 * lo.alpha.max(1.0) {
            break;
        }
    }
    // Fall back to the best point satisfying sufficient decrease.
    let accepted = (lo.alpha > 0.0).then(|| accept(&lo));
    Search {
        accepted,
        evaluations,
        non_finite,
    }
}
