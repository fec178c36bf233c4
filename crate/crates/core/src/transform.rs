//! Softplus-squared map between unconstrained reals and positive reals.

use crate::error::{bail, Result};

/// `log(1 + e^x)` without overflow for large `x` or underflow for small `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Logistic sigmoid, stable in both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Maps an unconstrained value to `softplus(x)^2`.
pub fn positive_transform(x: f64) -> Result<f64> {
    if !x.is_finite() {
        bail!(Domain, "positive transform of non-finite value {x}");
    }
    Ok(positive(x))
}

/// Unchecked variant of [`positive_transform`] used on hot paths where the
/// raw value is known to be finite.
#[inline]
pub fn positive(x: f64) -> f64 {
    let s = softplus(x);
    s * s
}

/// Derivative of [`positive`] with respect to its argument.
#[inline]
pub fn positive_derivative(x: f64) -> f64 {
    2.0 * softplus(x) * sigmoid(x)
}

/// Inverse of [`positive`]: returns the raw value `x` with `softplus(x)^2 == v`.
pub fn inverse_transform(v: f64) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() {
        bail!(
            Domain,
            "inverse positive transform needs a finite positive value, got {v}"
        );
    }
    let s = libm::sqrt(v);
    // log(e^s - 1) = s + log(1 - e^{-s})
    Ok(if s > 30.0 {
        s + libm::log1p(-libm::exp(-s))
    } else {
        libm::log(libm::expm1(s))
    })
}
