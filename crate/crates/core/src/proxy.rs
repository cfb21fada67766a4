//! Single-treatment sensitivity analysis with a noisy proxy `Z = U + ε_z` of
//! the confounder.
//!
//! After standardizing `Z`, the unknown share `σ_u²` of `Var(Z)` that is signal
//! indexes all models compatible with the data. Variances are maximum
//! likelihood (divisor `n`), which keeps `σ_T² = β̃² + σ²_{T|Z}` exact in sample.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bounds::IgnoranceRegion;
use crate::error::{dim_check, Error, Result};
use crate::linalg::ols;
use crate::num::Real;

/// Denominator floor for `σ_T² σ_u² − β̃²`.
const POSITIVITY_EPS: f64 = 1e-9;

/// Reduced-form regressions on the standardized proxy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxyFit<S: Real> {
    /// Coefficient of `Z` in the regression of `T` on `Z`.
    pub tilde_beta: S,
    /// Coefficient of `Z` in the regression of `Y` on `(T, Z)`.
    pub tilde_gamma: S,
    /// Coefficient of `T` in the regression of `Y` on `(T, Z)`.
    pub tilde_tau: S,
    pub sigma2_t: S,
    pub sigma2_t_given_z: S,
    pub sigma2_y_given_tz: S,
    pub tilde_beta_se: S,
    pub tilde_gamma_se: S,
    pub tilde_tau_se: S,
    pub n: usize,
}

pub fn fit_proxy<S: Real>(y: &DVector<S>, t: &DVector<S>, z: &DVector<S>) -> Result<ProxyFit<S>> {
    let n = y.len();
    dim_check("treatment length", n, t.len())?;
    dim_check("proxy length", n, z.len())?;
    if n < 4 {
        return Err(Error::Precondition(format!("proxy fit needs n >= 4, got {n}")));
    }
    let nf = S::of_usize(n);
    let zbar = z.sum() / nf;
    let zsd = (z.map(|v| (v - zbar) * (v - zbar)).sum() / nf).sqrt();
    if !(zsd > S::zero()) {
        return Err(Error::SingularFit { columns: vec![0] });
    }
    let zs = z.map(|v| (v - zbar) / zsd);
    let tbar = t.sum() / nf;
    let sigma2_t = t.map(|v| (v - tbar) * (v - tbar)).sum() / nf;

    let tz = ols(&DMatrix::from_column_slice(n, 1, zs.as_slice()), t, true)?;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { t[i] } else { zs[i] });
    let yz = ols(&x, y, true)?;
    let (se_tz, se_yz) = (tz.std_errors(), yz.std_errors());
    Ok(ProxyFit {
        tilde_beta: tz.coef[1],
        tilde_gamma: yz.coef[2],
        tilde_tau: yz.coef[1],
        sigma2_t,
        sigma2_t_given_z: tz.rss / nf,
        sigma2_y_given_tz: yz.rss / nf,
        tilde_beta_se: se_tz[1],
        tilde_gamma_se: se_yz[2],
        tilde_tau_se: se_yz[1],
        n,
    })
}

/// Feasible values of the sensitivity parameter `σ_u²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyDomain<S: Real> {
    pub lo: S,
    pub hi: S,
    /// False when `β̃ = γ̃ = 0`: the proxy is unrelated to both `T` and `Y`
    /// and the domain is all of `[0, 1]`.
    pub informative: bool,
}

/// `[(γ̃²σ²_{T|Z} + β̃²σ²_{Y|T,Z}) / (γ̃²σ²_{T|Z} + σ_T²σ²_{Y|T,Z}), 1]`.
pub fn sigma_u2_domain<S: Real>(fit: &ProxyFit<S>) -> ProxyDomain<S> {
    let g = fit.tilde_gamma * fit.tilde_gamma * fit.sigma2_t_given_z;
    let v = fit.sigma2_y_given_tz;
    let lo = (g + fit.tilde_beta * fit.tilde_beta * v) / (g + fit.sigma2_t * v);
    let lo = lo.max(S::zero()).min(S::one());
    ProxyDomain { lo, hi: S::one(), informative: fit.tilde_beta != S::zero() || fit.tilde_gamma != S::zero() }
}

/// `τ = τ̃ − γ̃β̃(1 − σ_u²) / (σ_T²σ_u² − β̃²)`.
pub fn tau_adjusted<S: Real>(fit: &ProxyFit<S>, sigma_u2: S) -> Result<S> {
    let dom = sigma_u2_domain(fit);
    let slack = S::of(1e-12);
    if !(sigma_u2 >= dom.lo - slack && sigma_u2 <= dom.hi + slack) {
        return Err(Error::Domain(format!("σ_u² = {sigma_u2} lies outside its domain [{}, {}]", dom.lo, dom.hi)));
    }
    let den = fit.sigma2_t * sigma_u2 - fit.tilde_beta * fit.tilde_beta;
    if den <= S::of(POSITIVITY_EPS) {
        return Err(Error::Positivity(format!(
            "σ_T²σ_u² − β̃² = {:e}: the treatment would be a deterministic function of the confounder",
            den.f64()
        )));
    }
    Ok(fit.tilde_tau - fit.tilde_gamma * fit.tilde_beta * (S::one() - sigma_u2) / den)
}

/// Range of `τ` over the whole domain: between `τ̃` and
/// `τ̃ − β̃σ²_{Y|T,Z} / (γ̃σ²_{T|Z})`, ordered by the sign of `γ̃β̃`.
pub fn tau_bounds<S: Real>(fit: &ProxyFit<S>) -> IgnoranceRegion<S> {
    let naive = fit.tilde_tau;
    let prod = fit.tilde_gamma * fit.tilde_beta;
    if prod == S::zero() {
        return IgnoranceRegion {
            naive,
            lower: naive,
            upper: naive,
            r2_cap: S::one(),
            bounded: true,
            reason: Some("proxy is unrelated to the treatment or the outcome; no adjustment".into()),
        };
    }
    let other = naive - fit.tilde_beta * fit.sigma2_y_given_tz / (fit.tilde_gamma * fit.sigma2_t_given_z);
    let (lower, upper) = if prod > S::zero() { (other, naive) } else { (naive, other) };
    IgnoranceRegion { naive, lower, upper, r2_cap: S::one(), bounded: true, reason: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{gen_proxy, ProxyParams};
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn exact_fit(beta: f64, gamma: f64, tau: f64, s2tz: f64, v: f64) -> ProxyFit<f64> {
        ProxyFit {
            tilde_beta: beta,
            tilde_gamma: gamma,
            tilde_tau: tau,
            sigma2_t: s2tz + beta * beta,
            sigma2_t_given_z: s2tz,
            sigma2_y_given_tz: v,
            tilde_beta_se: 0.0,
            tilde_gamma_se: 0.0,
            tilde_tau_se: 0.0,
            n: 100,
        }
    }

    #[test]
    fn population_example() {
        let fit = exact_fit(0.5, 0.4, 0.7, 1.25, 1.4);
        let dom = sigma_u2_domain(&fit);
        assert_relative_eq!(dom.lo, 0.55 / 2.3, epsilon = 1e-15);
        let region = tau_bounds(&fit);
        assert_relative_eq!(region.lower, -0.7, epsilon = 1e-12);
        assert_relative_eq!(region.upper, 0.7, epsilon = 1e-15);
        assert_relative_eq!(tau_adjusted(&fit, 0.5).unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn unit_sigma_u2_returns_naive() {
        let fit = exact_fit(0.3, -0.8, 1.1, 0.9, 2.0);
        assert_eq!(tau_adjusted(&fit, 1.0).unwrap(), 1.1);
    }

    #[test]
    fn zero_beta_domain() {
        let fit = exact_fit(0.0, 0.6, 0.2, 1.0, 1.5);
        let dom = sigma_u2_domain(&fit);
        let g = 0.36 * 1.0;
        assert_relative_eq!(dom.lo, g / (g + 1.0 * 1.5), epsilon = 1e-15);
        assert_eq!(tau_bounds(&fit).width(), 0.0);
        for s in [dom.lo, 0.5, 1.0] {
            assert_eq!(tau_adjusted(&fit, s).unwrap(), 0.2);
        }
    }

    #[test]
    fn uninformative_proxy_spans_unit_interval() {
        let fit = exact_fit(0.0, 0.0, 0.2, 1.0, 1.0);
        let dom = sigma_u2_domain(&fit);
        assert_eq!((dom.lo, dom.hi, dom.informative), (0.0, 1.0, false));
        assert!(matches!(tau_adjusted(&fit, 0.0), Err(Error::Positivity(_))));
    }

    #[test]
    fn positivity_and_domain_errors() {
        // γ̃ = 0 puts the lower endpoint on the positivity boundary
        let fit = exact_fit(0.5, 0.0, 0.1, 0.75, 1.0);
        let dom = sigma_u2_domain(&fit);
        assert!(matches!(tau_adjusted(&fit, dom.lo), Err(Error::Positivity(_))));
        let fit = exact_fit(0.5, 0.4, 0.7, 1.25, 1.4);
        assert!(matches!(tau_adjusted(&fit, 0.1), Err(Error::Domain(_))));
        assert!(matches!(tau_adjusted(&fit, 1.1), Err(Error::Domain(_))));
    }

    #[test]
    fn sign_flip_of_proxy_swaps_endpoints() {
        let data = gen_proxy(&ProxyParams::default(), 2000, 1).unwrap();
        let a = fit_proxy(&data.y, &data.t, &data.z).unwrap();
        let b = fit_proxy(&data.y, &data.t, &(-&data.z)).unwrap();
        let (ra, rb) = (tau_bounds(&a), tau_bounds(&b));
        assert_relative_eq!(ra.lower, rb.lower, epsilon = 1e-10);
        assert_relative_eq!(ra.upper, rb.upper, epsilon = 1e-10);
        assert_relative_eq!(a.tilde_beta, -b.tilde_beta, epsilon = 1e-12);
        assert_eq!(ra.upper, a.tilde_tau);
    }

    #[test]
    fn fitted_coefficients_match_population_values() {
        let p = ProxyParams::default();
        let data = gen_proxy(&p, 20_000, 2).unwrap();
        let fit = fit_proxy(&data.y, &data.t, &data.z).unwrap();
        assert!((fit.tilde_beta - p.tilde_beta()).abs() < 3.0 * fit.tilde_beta_se);
        assert!((fit.tilde_gamma - p.tilde_gamma()).abs() < 3.0 * fit.tilde_gamma_se);
        assert!((fit.tilde_tau - p.tilde_tau()).abs() < 3.0 * fit.tilde_tau_se);
    }

    #[test]
    fn independent_proxy_has_null_coefficients() {
        let data = gen_proxy(&ProxyParams::default(), 5000, 3).unwrap();
        let noise = gen_proxy(&ProxyParams::default(), 5000, 4).unwrap().z;
        let fit = fit_proxy(&data.y, &data.t, &noise).unwrap();
        assert!(fit.tilde_beta.abs() < 3.0 * fit.tilde_beta_se);
        assert!(fit.tilde_gamma.abs() < 3.0 * fit.tilde_gamma_se);
    }

    #[test]
    fn perfect_proxy_recovers_tau() {
        let p = ProxyParams { sigma2_u: 1.0, sigma2_z: 0.0, ..ProxyParams::default() };
        let data = gen_proxy(&p, 5000, 5).unwrap();
        let fit = fit_proxy(&data.y, &data.t, &data.z).unwrap();
        assert!((fit.tilde_tau - p.tau).abs() < 3.0 * fit.tilde_tau_se);
    }

    #[test]
    fn adjustment_at_true_sigma_u2_recovers_tau() {
        // replicate datasets give the sampling SE of the adjusted estimate
        let p = ProxyParams::default();
        let est: Vec<f64> = (0..50)
            .map(|seed| {
                let data = gen_proxy(&p, 2000, 100 + seed).unwrap();
                tau_adjusted(&fit_proxy(&data.y, &data.t, &data.z).unwrap(), p.standardized_sigma2_u()).unwrap()
            })
            .collect();
        let mean = est.iter().sum::<f64>() / 50.0;
        let sd = (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
        assert!((mean - p.tau).abs() < 3.0 * sd / 50f64.sqrt(), "{mean} (sd {sd})");
        assert!(est.iter().filter(|v| (*v - p.tau).abs() < 3.0 * sd).count() >= 47);
    }

    #[test]
    fn constant_proxy_is_singular() {
        let data = gen_proxy(&ProxyParams::default(), 10, 7).unwrap();
        let z = DVector::from_element(10, 1.0);
        assert!(matches!(fit_proxy(&data.y, &data.t, &z), Err(Error::SingularFit { .. })));
        assert!(matches!(fit_proxy(&data.y.rows(0, 3).into_owned(), &data.t.rows(0, 3).into_owned(), &data.z.rows(0, 3).into_owned()), Err(Error::Precondition(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn endpoints_compose_with_domain(b in -2.0f64..2.0, g in -2.0f64..2.0, tau in -1.0f64..1.0, s2 in 0.1f64..3.0, v in 0.1f64..3.0) {
            proptest::prop_assume!(b.abs() > 1e-3 && g.abs() > 1e-3);
            let fit = exact_fit(b, g, tau, s2, v);
            let dom = sigma_u2_domain(&fit);
            let region = tau_bounds(&fit);
            let at_lo = tau_adjusted(&fit, dom.lo).unwrap();
            let at_hi = tau_adjusted(&fit, dom.hi).unwrap();
            let scale = 1.0 + region.width().abs();
            prop_assert!((at_hi - tau).abs() < 1e-12);
            prop_assert!((at_lo.min(at_hi) - region.lower).abs() < 1e-10 * scale);
            prop_assert!((at_lo.max(at_hi) - region.upper).abs() < 1e-10 * scale);
        }

        #[test]
        fn adjustment_is_monotone(b in -2.0f64..2.0, g in -2.0f64..2.0, s2 in 0.1f64..3.0, v in 0.1f64..3.0) {
            proptest::prop_assume!(b.abs() > 1e-3 && g.abs() > 1e-3);
            let fit = exact_fit(b, g, 0.0, s2, v);
            let dom = sigma_u2_domain(&fit);
            let vals: Vec<f64> = (0..=20).map(|i| tau_adjusted(&fit, dom.lo + (dom.hi - dom.lo) * i as f64 / 20.0).unwrap()).collect();
            let sign = (g * b).signum();
            prop_assert!(vals.windows(2).all(|w| sign * (w[1] - w[0]) >= -1e-12));
        }
    }
}
