//! Standard normal density, CDF and quantile.

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::num::Real;

/// Lower clamp applied to CDF values before taking a normal quantile.
pub const CDF_FLOOR: f64 = 1e-15;
/// Upper clamp applied to CDF values before taking a normal quantile.
pub const CDF_CEIL: f64 = 1.0 - 1e-15;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile. Returns ±∞ at the endpoints and NaN outside
/// `[0, 1]`; callers that need a finite value clamp first.
pub fn quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // one Halley step against the full-precision CDF
    let err = cdf(x) - p;
    let d = pdf(x);
    if d <= 0.0 {
        return x;
    }
    let u = err / d;
    x - u / (1.0 + 0.5 * x * u)
}

/// Clamps into `[CDF_FLOOR, CDF_CEIL]`, reporting whether clamping happened.
pub fn clamp_unit(p: f64) -> (f64, bool) {
    if p < CDF_FLOOR {
        (CDF_FLOOR, true)
    } else if p > CDF_CEIL {
        (CDF_CEIL, true)
    } else {
        (p, false)
    }
}

/// `φ(x)/Φ(x)`, stable for very negative `x` where both factors underflow.
pub fn inverse_mills(x: f64) -> f64 {
    if x > -30.0 {
        pdf(x) / cdf(x)
    } else {
        // asymptotic expansion of φ/Φ as x → -∞
        let x2 = x * x;
        -x / (1.0 - 1.0 / x2 + 3.0 / (x2 * x2))
    }
}

/// `ln Φ(x)`, stable in the lower tail.
pub fn ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        cdf(x).ln()
    } else {
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - 1.0 / x2).ln()
    }
}

pub fn cdf_s<S: Real>(x: S) -> S {
    S::of(cdf(x.f64()))
}

pub fn quantile_s<S: Real>(p: S) -> S {
    S::of(quantile(p.f64()))
}
