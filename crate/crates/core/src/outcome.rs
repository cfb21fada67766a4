//! Observed outcome laws `f(y | t)`.
//!
//! Every model hands out a [`ConditionalLaw`] at a treatment level: the
//! conditional CDF and quantile the copula machinery pushes draws through.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::ols;
use crate::model::TreatmentMatrix;
use crate::normal;
use crate::num::Real;

/// Conditional distribution of `Y` at one treatment level.
#[derive(Debug, Clone, Copy)]
pub enum ConditionalLaw<'a> {
    Gaussian { mean: f64, sd: f64 },
    /// `mean + R` where `R` follows the sorted residual sample.
    Empirical { mean: f64, residuals: &'a [f64] },
    /// Bernoulli with success probability `p1`.
    Bernoulli { p1: f64 },
}

impl ConditionalLaw<'_> {
    pub fn mean(&self) -> f64 {
        match *self {
            ConditionalLaw::Gaussian { mean, .. } => mean,
            ConditionalLaw::Empirical { mean, residuals } => {
                mean + residuals.iter().sum::<f64>() / residuals.len() as f64
            }
            ConditionalLaw::Bernoulli { p1 } => p1,
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            ConditionalLaw::Gaussian { mean, sd } => normal::cdf((y - mean) / sd),
            ConditionalLaw::Empirical { mean, residuals } => empirical_cdf(residuals, y - mean),
            ConditionalLaw::Bernoulli { p1 } => {
                if y < 0.0 {
                    0.0
                } else if y < 1.0 {
                    1.0 - p1
                } else {
                    1.0
                }
            }
        }
    }

    /// Inverse CDF on the open unit interval.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile level {p} is outside (0, 1)")));
        }
        Ok(self.quantile_unchecked(p))
    }

    pub(crate) fn quantile_unchecked(&self, p: f64) -> f64 {
        match *self {
            ConditionalLaw::Gaussian { mean, sd } => mean + sd * normal::quantile(p),
            ConditionalLaw::Empirical { mean, residuals } => mean + type7_quantile(residuals, p),
            ConditionalLaw::Bernoulli { p1 } => {
                if p <= 1.0 - p1 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Type-7 sample quantile of a sorted sample.
pub fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = (h.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Inverse of [`type7_quantile`]: piecewise linear between order statistics,
/// 0 below the minimum and 1 at or above the maximum.
pub fn empirical_cdf(sorted: &[f64], z: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return if z < sorted[0] { 0.0 } else { 1.0 };
    }
    if z < sorted[0] {
        return 0.0;
    }
    if z >= sorted[n - 1] {
        return 1.0;
    }
    let i = sorted.partition_point(|&r| r <= z) - 1;
    let width = sorted[i + 1] - sorted[i];
    let frac = if width > 0.0 { (z - sorted[i]) / width } else { 0.0 };
    (i as f64 + frac) / (n - 1) as f64
}

/// Observed-data outcome model.
pub trait OutcomeModel: Send + Sync {
    /// Number of treatments the model expects.
    fn k(&self) -> usize;

    /// Conditional law at treatment level `t`.
    fn conditional(&self, t: &DVector<f64>) -> Result<ConditionalLaw<'_>>;

    /// Conditional standard deviation of `Y` given `T` (constant in `t`).
    fn sigma_y_given_t(&self) -> f64;

    fn mean(&self, t: &DVector<f64>) -> Result<f64> {
        Ok(self.conditional(t)?.mean())
    }
}

/// Gaussian linear outcome `Y | t ~ N(intercept + τᵀt, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GaussianOutcome<S: Real> {
    #[serde(with = "vec_serde")]
    pub tau_naive: DVector<S>,
    #[serde(with = "scalar_serde")]
    pub intercept: S,
    #[serde(with = "scalar_serde")]
    pub sigma2_y_given_t: S,
    /// Standard errors of `tau_naive`.
    #[serde(with = "vec_serde")]
    pub tau_se: DVector<S>,
    #[serde(with = "scalar_serde")]
    pub intercept_se: S,
    pub n: usize,
}

impl<S: Real> GaussianOutcome<S> {
    pub fn predict(&self, t: &DVector<S>) -> Result<S> {
        dim_check("treatment vector", self.tau_naive.len(), t.len())?;
        Ok(self.intercept + self.tau_naive.dot(t))
    }

    pub fn sigma_y(&self) -> S {
        self.sigma2_y_given_t.sqrt()
    }
}

impl<S: Real> OutcomeModel for GaussianOutcome<S> {
    fn k(&self) -> usize {
        self.tau_naive.len()
    }

    fn conditional(&self, t: &DVector<f64>) -> Result<ConditionalLaw<'_>> {
        dim_check("treatment vector", self.k(), t.len())?;
        let mean = self.intercept.f64() + self.tau_naive.iter().zip(t.iter()).map(|(a, b)| a.f64() * b).sum::<f64>();
        Ok(ConditionalLaw::Gaussian { mean, sd: self.sigma_y_given_t() })
    }

    fn sigma_y_given_t(&self) -> f64 {
        self.sigma2_y_given_t.f64().sqrt()
    }
}

/// Least squares with intercept; residual variance `RSS/(n − k − 1)`.
pub fn fit_linear<S: Real>(t: &TreatmentMatrix<S>, y: &DVector<S>) -> Result<GaussianOutcome<S>> {
    let (n, k) = (t.nrows(), t.ncols());
    dim_check("outcome length", n, y.len())?;
    if n <= k + 1 {
        return Err(Error::Precondition(format!("linear fit needs n > k + 1, got n={n}, k={k}")));
    }
    let fit = ols(t.data(), y, true)?;
    let sigma2 = fit.sigma2();
    let scale = fit.tss / S::of_usize(n);
    if sigma2 <= S::of(1e-12) * scale.max(S::of(f64::MIN_POSITIVE)) {
        warn!("residual variance {sigma2} is numerically zero; the outcome is a deterministic function of the treatments");
    }
    let se = fit.std_errors();
    Ok(GaussianOutcome {
        tau_naive: fit.coef.rows(1, k).into_owned(),
        intercept: fit.coef[0],
        sigma2_y_given_t: sigma2,
        tau_se: se.rows(1, k).into_owned(),
        intercept_se: se[0],
        n,
    })
}

/// Probit outcome `P(Y=1 | t) = Φ(intercept + coefᵀt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BinaryOutcome<S: Real> {
    #[serde(with = "vec_serde")]
    pub probit_coef: DVector<S>,
    #[serde(with = "scalar_serde")]
    pub probit_intercept: S,
    /// Marginal `P(Y = 1)`, estimated by the sample frequency.
    #[serde(with = "scalar_serde")]
    pub p_y1: S,
    #[serde(with = "vec_serde")]
    pub coef_se: DVector<S>,
    #[serde(with = "scalar_serde")]
    pub intercept_se: S,
    pub iterations: usize,
}

impl<S: Real> BinaryOutcome<S> {
    pub fn linear_predictor(&self, t: &DVector<S>) -> Result<S> {
        dim_check("treatment vector", self.probit_coef.len(), t.len())?;
        Ok(self.probit_intercept + self.probit_coef.dot(t))
    }

    /// `μ_{y|t} = P(Y = 1 | T = t)`.
    pub fn mu_y(&self, t: &DVector<S>) -> Result<S> {
        Ok(normal::cdf_s(self.linear_predictor(t)?))
    }
}

impl<S: Real> OutcomeModel for BinaryOutcome<S> {
    fn k(&self) -> usize {
        self.probit_coef.len()
    }

    fn conditional(&self, t: &DVector<f64>) -> Result<ConditionalLaw<'_>> {
        dim_check("treatment vector", self.k(), t.len())?;
        let eta = self.probit_intercept.f64()
            + self.probit_coef.iter().zip(t.iter()).map(|(a, b)| a.f64() * b).sum::<f64>();
        Ok(ConditionalLaw::Bernoulli { p1: normal::cdf(eta) })
    }

    fn sigma_y_given_t(&self) -> f64 {
        // latent probit scale
        1.0
    }
}

const PROBIT_SCORE_TOL: f64 = 1e-8;
const PROBIT_MAX_ITER: usize = 100;
const PROBIT_DIVERGENCE: f64 = 1e3;

/// Probit maximum likelihood by Newton iterations with step halving.
///
/// Constant treatment columns carry no information beside the intercept;
/// their coefficients are pinned at zero with a warning.
pub fn fit_probit<S: Real>(t: &TreatmentMatrix<S>, y: &DVector<S>) -> Result<BinaryOutcome<S>> {
    let (n, k) = (t.nrows(), t.ncols());
    dim_check("outcome length", n, y.len())?;
    let yv: Vec<f64> = y.iter().map(|v| v.f64()).collect();
    if yv.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Precondition("probit outcome must be 0/1".into()));
    }
    let ones = yv.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::Precondition("probit fit needs both outcome classes present".into()));
    }

    let data: DMatrix<f64> = t.data().map(|v| v.f64());
    let mut active = Vec::new();
    for j in 0..k {
        let col = data.column(j);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            warn!("treatment column {j} is constant; its probit coefficient is fixed at 0");
        } else {
            active.push(j);
        }
    }
    let p = active.len() + 1;
    let x = DMatrix::from_fn(n, p, |i, c| if c == 0 { 1.0 } else { data[(i, active[c - 1])] });
    if !active.is_empty() {
        ols(&x.columns(1, p - 1).into_owned(), &DVector::from_vec(yv.clone()), true).map_err(|e| match e {
            Error::SingularFit { columns } => Error::SingularFit { columns: columns.iter().map(|&c| active[c]).collect() },
            other => other,
        })?;
    }

    let q: Vec<f64> = yv.iter().map(|&v| 2.0 * v - 1.0).collect();
    let loglik = |beta: &DVector<f64>| -> f64 {
        let eta = &x * beta;
        (0..n).map(|i| normal::ln_cdf(q[i] * eta[i])).sum()
    };
    let mut beta = DVector::zeros(p);
    beta[0] = normal::quantile(ones as f64 / n as f64);
    let mut ll = loglik(&beta);
    let mut iterations = 0;
    let mut info;
    loop {
        let eta = &x * &beta;
        let mut score = DVector::zeros(p);
        let mut weights = DVector::zeros(n);
        for i in 0..n {
            let s = q[i] * eta[i];
            let lam = normal::inverse_mills(s);
            score.axpy(q[i] * lam, &x.row(i).transpose(), 1.0);
            weights[i] = lam * (lam + s);
        }
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        info = x.transpose() * xw;
        let max_score = score.amax();
        if max_score < PROBIT_SCORE_TOL {
            // a finite maximizer always misclassifies some unit; if none is,
            // the likelihood only approaches its supremum at infinity
            if (0..n).all(|i| q[i] * eta[i] > 0.0) {
                return Err(Error::Separation { max_abs_coef: beta.amax() });
            }
            break;
        }
        if iterations >= PROBIT_MAX_ITER {
            return Err(Error::NonConvergence {
                iterations,
                reason: format!("probit score {max_score:e} still above {PROBIT_SCORE_TOL:e}"),
                last: beta.iter().copied().collect(),
            });
        }
        iterations += 1;
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .ok_or(Error::Separation { max_abs_coef: beta.amax() })?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * scale;
            let cand_ll = loglik(&cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if beta.amax() > PROBIT_DIVERGENCE {
            return Err(Error::Separation { max_abs_coef: beta.amax() });
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations,
                reason: "step halving could not increase the likelihood".into(),
                last: beta.iter().copied().collect(),
            });
        }
    }

    let cov = info.try_inverse().ok_or(Error::Separation { max_abs_coef: beta.amax() })?;
    let mut coef = DVector::zeros(k);
    let mut coef_se = DVector::zeros(k);
    for (c, &j) in active.iter().enumerate() {
        coef[j] = S::of(beta[c + 1]);
        coef_se[j] = S::of(cov[(c + 1, c + 1)].max(0.0).sqrt());
    }
    Ok(BinaryOutcome {
        probit_coef: coef,
        probit_intercept: S::of(beta[0]),
        p_y1: S::of(ones as f64 / n as f64),
        coef_se,
        intercept_se: S::of(cov[(0, 0)].max(0.0).sqrt()),
        iterations,
    })
}

/// A fitted conditional-mean function `t ↦ E[Y | t]`.
pub trait MeanRegressor: Send + Sync + std::fmt::Debug {
    fn predict(&self, t: &DVector<f64>) -> f64;

    /// Number of fitted parameters, used for the residual degrees of freedom.
    fn n_params(&self) -> usize {
        0
    }

    /// Serializable description, when the regressor supports it.
    fn to_polynomial(&self) -> Option<&PolynomialRegressor> {
        None
    }
}

/// Least-squares polynomial in the treatments with all interactions up to a
/// total degree. Columns are standardized before expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialRegressor {
    pub degree: u32,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// One exponent vector per monomial; the first is the constant.
    pub exponents: Vec<Vec<u32>>,
    pub coef: Vec<f64>,
}

impl PolynomialRegressor {
    pub fn fit(t: &TreatmentMatrix<f64>, y: &DVector<f64>, degree: u32) -> Result<Self> {
        let (n, k) = (t.nrows(), t.ncols());
        dim_check("outcome length", n, y.len())?;
        if degree == 0 {
            return Err(Error::Domain("polynomial degree must be at least 1".into()));
        }
        let center: Vec<f64> = t.column_means().iter().copied().collect();
        let scale: Vec<f64> = (0..k)
            .map(|j| {
                let c = t.data().column(j);
                let var = c.iter().map(|v| (v - center[j]).powi(2)).sum::<f64>() / n as f64;
                if var > 0.0 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let mut exponents = vec![vec![0u32; k]];
        let mut current = exponents.clone();
        for _ in 0..degree {
            let mut next = Vec::new();
            for e in &current {
                // non-decreasing variable order keeps each monomial unique
                let start = e.iter().rposition(|&p| p > 0).unwrap_or(0);
                for j in start..k {
                    let mut f = e.clone();
                    f[j] += 1;
                    next.push(f);
                }
            }
            exponents.extend(next.iter().cloned());
            current = next;
        }
        let mut reg = Self { degree, center, scale, exponents, coef: vec![] };
        let p = reg.exponents.len();
        if n < p {
            return Err(Error::Precondition(format!("{n} rows cannot fit a {p}-term polynomial")));
        }
        let design = DMatrix::from_fn(n, p - 1, |i, c| reg.monomial(&t.row(i), c + 1));
        let fit = ols(&design, y, true)?;
        reg.coef = fit.coef.iter().copied().collect();
        Ok(reg)
    }

    fn monomial(&self, t: &DVector<f64>, c: usize) -> f64 {
        self.exponents[c]
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(j, &e)| ((t[j] - self.center[j]) / self.scale[j]).powi(e as i32))
            .product()
    }
}

impl MeanRegressor for PolynomialRegressor {
    fn predict(&self, t: &DVector<f64>) -> f64 {
        (0..self.exponents.len()).map(|c| self.coef[c] * if c == 0 { 1.0 } else { self.monomial(t, c) }).sum()
    }

    fn n_params(&self) -> usize {
        self.coef.len()
    }

    fn to_polynomial(&self) -> Option<&PolynomialRegressor> {
        Some(self)
    }
}

/// Flexible-mean outcome with one pooled additive residual law.
#[derive(Debug)]
pub struct EmpiricalOutcome {
    pub mean_fn: Box<dyn MeanRegressor>,
    /// Sorted residual sample.
    pub residual_quantiles: Vec<f64>,
    pub sigma2_y_given_t: f64,
    k: usize,
}

impl EmpiricalOutcome {
    /// Residuals of a fitted regressor on the data it was fit to.
    pub fn from_regressor(mean_fn: Box<dyn MeanRegressor>, t: &TreatmentMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let n = t.nrows();
        dim_check("outcome length", n, y.len())?;
        let residuals: Vec<f64> = (0..n).map(|i| y[i] - mean_fn.predict(&t.row(i))).collect();
        let dof = n.saturating_sub(mean_fn.n_params()).max(1);
        let sigma2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof as f64;
        Self::from_parts(mean_fn, residuals, sigma2, t.ncols())
    }

    pub fn from_parts(mean_fn: Box<dyn MeanRegressor>, mut residuals: Vec<f64>, sigma2: f64, k: usize) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::Precondition("empirical outcome needs a nonempty residual sample".into()));
        }
        if residuals.iter().any(|r| !r.is_finite()) {
            return Err(Error::Malformed("non-finite residual".into()));
        }
        residuals.sort_by(f64::total_cmp);
        Ok(Self { mean_fn, residual_quantiles: residuals, sigma2_y_given_t: sigma2, k })
    }
}

impl OutcomeModel for EmpiricalOutcome {
    fn k(&self) -> usize {
        self.k
    }

    fn conditional(&self, t: &DVector<f64>) -> Result<ConditionalLaw<'_>> {
        dim_check("treatment vector", self.k, t.len())?;
        Ok(ConditionalLaw::Empirical { mean: self.mean_fn.predict(t), residuals: &self.residual_quantiles })
    }

    fn sigma_y_given_t(&self) -> f64 {
        self.sigma2_y_given_t.sqrt()
    }
}

/// Empirical outcome with the built-in polynomial mean.
pub fn fit_empirical(t: &TreatmentMatrix<f64>, y: &DVector<f64>, degree: u32) -> Result<EmpiricalOutcome> {
    let reg = PolynomialRegressor::fit(t, y, degree)?;
    EmpiricalOutcome::from_regressor(Box::new(reg), t, y)
}

/// Any fitted outcome, as stored on disk.
#[derive(Debug)]
pub enum FittedOutcome {
    Gaussian(GaussianOutcome<f64>),
    Probit(BinaryOutcome<f64>),
    Empirical(EmpiricalOutcome),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OutcomeFile {
    Gaussian(GaussianOutcome<f64>),
    Probit(BinaryOutcome<f64>),
    Empirical { k: usize, regressor: PolynomialRegressor, residuals: Vec<f64>, sigma2_y_given_t: f64 },
}

impl FittedOutcome {
    pub fn kind(&self) -> &'static str {
        match self {
            FittedOutcome::Gaussian(_) => "gaussian",
            FittedOutcome::Probit(_) => "probit",
            FittedOutcome::Empirical(_) => "empirical",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = match self {
            FittedOutcome::Gaussian(g) => OutcomeFile::Gaussian(g.clone()),
            FittedOutcome::Probit(b) => OutcomeFile::Probit(b.clone()),
            FittedOutcome::Empirical(e) => OutcomeFile::Empirical {
                k: e.k,
                regressor: e
                    .mean_fn
                    .to_polynomial()
                    .ok_or_else(|| Error::Precondition("only polynomial regressors can be serialized".into()))?
                    .clone(),
                residuals: e.residual_quantiles.clone(),
                sigma2_y_given_t: e.sigma2_y_given_t,
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(match serde_json::from_str::<OutcomeFile>(text)? {
            OutcomeFile::Gaussian(g) => {
                if g.tau_naive.len() != g.tau_se.len() {
                    return Err(Error::Malformed("tau_naive and tau_se lengths differ".into()));
                }
                FittedOutcome::Gaussian(g)
            }
            OutcomeFile::Probit(b) => {
                if b.probit_coef.len() != b.coef_se.len() {
                    return Err(Error::Malformed("probit_coef and coef_se lengths differ".into()));
                }
                FittedOutcome::Probit(b)
            }
            OutcomeFile::Empirical { k, regressor, residuals, sigma2_y_given_t } => {
                if regressor.center.len() != k || regressor.coef.len() != regressor.exponents.len() {
                    return Err(Error::Malformed("polynomial regressor does not match k".into()));
                }
                FittedOutcome::Empirical(EmpiricalOutcome::from_parts(Box::new(regressor), residuals, sigma2_y_given_t, k)?)
            }
        })
    }

    pub fn as_model(&self) -> &dyn OutcomeModel {
        match self {
            FittedOutcome::Gaussian(g) => g,
            FittedOutcome::Probit(b) => b,
            FittedOutcome::Empirical(e) => e,
        }
    }
}

mod vec_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Real, Z: Serializer>(v: &DVector<S>, s: Z) -> std::result::Result<Z::Ok, Z::Error> {
        let raw: Vec<f64> = v.iter().map(|x| x.f64()).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, S: Real, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<S>, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_iterator(raw.len(), raw.into_iter().map(S::of)))
    }
}

mod scalar_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Real, Z: Serializer>(v: &S, s: Z) -> std::result::Result<Z::Ok, Z::Error> {
        v.f64().serialize(s)
    }

    pub fn deserialize<'de, S: Real, D: Deserializer<'de>>(d: D) -> std::result::Result<S, D::Error> {
        Ok(S::of(f64::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn exact_linear_response_has_zero_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian_matrix(&mut rng, 50, 3);
        let y = x.column(0) * 2.0;
        let fit = fit_linear(&TreatmentMatrix::new(x, None).unwrap(), &y).unwrap();
        assert_relative_eq!(fit.tau_naive[0], 2.0, epsilon = 1e-12);
        assert!(fit.tau_naive[1].abs() < 1e-12 && fit.tau_naive[2].abs() < 1e-12);
        assert!(fit.sigma2_y_given_t < 1e-20);
    }

    #[test]
    fn unrelated_outcome_has_null_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian_matrix(&mut rng, 2000, 4);
        let y = DVector::from_fn(2000, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = fit_linear(&TreatmentMatrix::new(x, None).unwrap(), &y).unwrap();
        for j in 0..4 {
            assert!(fit.tau_naive[j].abs() < 3.0 * fit.tau_se[j]);
        }
    }

    #[test]
    fn linear_fit_reports_dependent_columns() {
        let x = DMatrix::from_fn(10, 3, |i, j| if j == 2 { 2.0 * i as f64 } else { ((i * (j + 1)) as f64).sin() });
        let mut x = x;
        for i in 0..10 {
            x[(i, 2)] = x[(i, 0)] * 3.0 - x[(i, 1)];
        }
        let y = DVector::from_fn(10, |i, _| i as f64);
        match fit_linear(&TreatmentMatrix::new(x, None).unwrap(), &y) {
            Err(Error::SingularFit { columns }) => assert_eq!(columns, vec![2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn probit_recovers_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20_000;
        let x = gaussian_matrix(&mut rng, n, 1);
        let y = DVector::from_fn(n, |i, _| {
            let e: f64 = rng.sample(StandardNormal);
            if 0.5 * x[(i, 0)] + e > 0.0 { 1.0 } else { 0.0 }
        });
        let fit = fit_probit(&TreatmentMatrix::new(x, None).unwrap(), &y).unwrap();
        assert!((fit.probit_coef[0] - 0.5).abs() < 3.0 * fit.coef_se[0], "{fit:?}");
        assert!(fit.probit_intercept.abs() < 3.0 * fit.intercept_se);
    }

    #[test]
    fn probit_needs_both_classes() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y = DVector::from_element(10, 1.0);
        assert!(matches!(fit_probit(&TreatmentMatrix::new(x, None).unwrap(), &y), Err(Error::Precondition(_))));
    }

    #[test]
    fn probit_with_constant_treatment_fits_intercept_only() {
        let x = DMatrix::from_element(100, 1, 3.0);
        let y = DVector::from_fn(100, |i, _| (i % 2) as f64);
        let fit = fit_probit(&TreatmentMatrix::new(x, None).unwrap(), &y).unwrap();
        assert!(fit.probit_intercept.abs() < 1e-10);
        assert_eq!(fit.probit_coef[0], 0.0);
    }

    #[test]
    fn probit_flags_separation() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64 - 19.5);
        let y = DVector::from_fn(40, |i, _| if i >= 20 { 1.0 } else { 0.0 });
        let r = fit_probit(&TreatmentMatrix::new(x, None).unwrap(), &y);
        assert!(matches!(r, Err(Error::Separation { .. })), "{r:?}");
    }

    #[test]
    fn gaussian_law_inverse_pair() {
        let model = GaussianOutcome {
            tau_naive: dvector![1.0, -2.0],
            intercept: 0.5,
            sigma2_y_given_t: 4.0,
            tau_se: dvector![0.0, 0.0],
            intercept_se: 0.0,
            n: 10,
        };
        let t = dvector![0.3, 0.1];
        let law = model.conditional(&t).unwrap();
        assert_eq!(law.quantile(normal::cdf(0.0)).unwrap(), law.mean());
        assert_relative_eq!(law.mean(), 0.6, epsilon = 1e-15);
        assert_relative_eq!(law.cdf(law.quantile(0.3).unwrap()), 0.3, epsilon = 1e-12);
        assert!(matches!(law.quantile(1.0), Err(Error::Domain(_))));
        assert!(matches!(law.quantile(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn empirical_quantiles_interpolate_order_statistics() {
        let r = [-1.0, 0.0, 1.0];
        assert_eq!(type7_quantile(&r, 0.5), 0.0);
        assert_eq!(type7_quantile(&r, 0.25), -0.5);
        assert_eq!(empirical_cdf(&r, -0.5), 0.25);
        assert_eq!(empirical_cdf(&r, 2.0), 1.0);
        assert_eq!(empirical_cdf(&r, -2.0), 0.0);
        let law = ConditionalLaw::Empirical { mean: 4.0, residuals: &r };
        assert_eq!(law.quantile(0.5).unwrap(), 4.0);
    }

    #[test]
    fn bernoulli_law() {
        let law = ConditionalLaw::Bernoulli { p1: 0.3 };
        assert_eq!(law.quantile(0.7).unwrap(), 0.0);
        assert_eq!(law.quantile(0.7000001).unwrap(), 1.0);
        assert_eq!(law.cdf(0.0), 0.7);
        assert_eq!(law.mean(), 0.3);
    }

    #[test]
    fn polynomial_regressor_fits_quadratic_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = gaussian_matrix(&mut rng, 200, 2);
        let y = DVector::from_fn(200, |i, _| 1.0 + x[(i, 0)] - 2.0 * x[(i, 0)] * x[(i, 1)] + 0.5 * x[(i, 1)].powi(2));
        let t = TreatmentMatrix::new(x, None).unwrap();
        let reg = PolynomialRegressor::fit(&t, &y, 2).unwrap();
        assert_eq!(reg.exponents.len(), 6);
        let q = dvector![0.7, -1.3];
        assert_relative_eq!(reg.predict(&q), 1.0 + 0.7 - 2.0 * 0.7 * -1.3 + 0.5 * 1.69, epsilon = 1e-9);
    }

    #[test]
    fn outcome_json_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = gaussian_matrix(&mut rng, 100, 2);
        let y = DVector::from_fn(100, |i, _| x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let t = TreatmentMatrix::new(x, None).unwrap();
        let g = FittedOutcome::Gaussian(fit_linear(&t, &y).unwrap());
        let back = FittedOutcome::from_json(&g.to_json().unwrap()).unwrap();
        match (&g, &back) {
            (FittedOutcome::Gaussian(a), FittedOutcome::Gaussian(b)) => assert_eq!(a, b),
            _ => panic!("kind changed"),
        }
        let e = FittedOutcome::Empirical(fit_empirical(&t, &y, 2).unwrap());
        let back = FittedOutcome::from_json(&e.to_json().unwrap()).unwrap();
        let q = dvector![0.2, 0.4];
        let (a, b) = (e.as_model().conditional(&q).unwrap(), back.as_model().conditional(&q).unwrap());
        assert_eq!(a.quantile(0.37).unwrap(), b.quantile(0.37).unwrap());
    }

    proptest! {
        #[test]
        fn empirical_law_is_monotone_and_inverse(mut res in proptest::collection::vec(-10.0f64..10.0, 2..40), p1 in 0.001f64..0.999, p2 in 0.001f64..0.999) {
            res.sort_by(f64::total_cmp);
            let law = ConditionalLaw::Empirical { mean: 1.5, residuals: &res };
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(law.quantile(lo).unwrap() <= law.quantile(hi).unwrap());
            let distinct = res.windows(2).all(|w| w[1] > w[0]);
            if distinct {
                prop_assert!((law.cdf(law.quantile(lo).unwrap()) - lo).abs() < 1e-9);
            }
        }

        #[test]
        fn gaussian_law_is_monotone(mean in -5.0f64..5.0, sd in 0.01f64..10.0, p1 in 1e-9f64..1.0, p2 in 1e-9f64..1.0) {
            let law = ConditionalLaw::Gaussian { mean, sd };
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            prop_assume!(hi < 1.0);
            prop_assert!(law.quantile(lo).unwrap() <= law.quantile(hi).unwrap());
        }
    }
}
