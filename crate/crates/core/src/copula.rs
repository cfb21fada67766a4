//! Copula link between the outcome and the latent confounder.
//!
//! The outcome is gaussianized, `ỹ = Φ⁻¹(F_{Y|t}(y))`, and under the Gaussian
//! copula `ỹ = γᵀ(u − μ_{u|t}) + ε` with `Var(ε) = 1 − γᵀΣ_{u|t}γ`. Under an
//! intervention the confounder keeps its population law, approximated by the
//! mixture of `f(u | tᵢ)` over the observed rows.

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{sym_eigen_desc, sym_sqrt};
use crate::model::{ConditionalConfounder, Contrast, TreatmentMatrix};
use crate::normal;
use crate::num::Real;
use crate::outcome::{ConditionalLaw, OutcomeModel};

/// Default Monte Carlo draws per observed row.
pub const DEFAULT_N_SIM: usize = 200;
/// Share of clamped CDF values above which a warning is logged.
const CLAMP_WARN_FRACTION: f64 = 1e-3;

/// Sensitivity vector on the standardized (unit residual variance) scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySpec<S: Real> {
    pub gamma: DVector<S>,
    /// `γᵀ Σ_{u|t} γ`, the share of residual outcome variance explained by `U`.
    pub r2: S,
    /// Unit vector `d` with `γ = √r2 · Σ^{-1/2} d`; zero when `r2 = 0`.
    pub direction: DVector<S>,
}

impl<S: Real> SensitivitySpec<S> {
    pub fn new(gamma: DVector<S>, sigma_u_given_t: &DMatrix<S>) -> Result<Self> {
        dim_check("sensitivity vector", sigma_u_given_t.nrows(), gamma.len())?;
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::Domain("sensitivity vector has non-finite entries".into()));
        }
        let r2 = (sigma_u_given_t * &gamma).dot(&gamma);
        if r2 > S::one() + S::of(1e-9) {
            return Err(Error::Domain(format!(
                "γᵀΣγ = {r2} exceeds 1: the confounder would explain more than all residual outcome variance"
            )));
        }
        let r2 = r2.max(S::zero());
        let direction = if r2 > S::zero() {
            sym_sqrt(sigma_u_given_t) * &gamma / r2.sqrt()
        } else {
            DVector::zeros(gamma.len())
        };
        Ok(Self { gamma, r2, direction })
    }

    /// No confounding.
    pub fn zero(m: usize) -> Self {
        Self { gamma: DVector::zeros(m), r2: S::zero(), direction: DVector::zeros(m) }
    }

    pub fn m(&self) -> usize {
        self.gamma.len()
    }

    /// `γ` on the outcome's own scale: `σ_{y|t} γ`.
    pub fn raw_gamma(&self, sigma_y_given_t: S) -> DVector<S> {
        &self.gamma * sigma_y_given_t
    }

    /// Inverse of [`SensitivitySpec::raw_gamma`].
    pub fn from_raw(raw: DVector<S>, sigma_y_given_t: S, sigma_u_given_t: &DMatrix<S>) -> Result<Self> {
        if sigma_y_given_t <= S::zero() {
            return Err(Error::Domain("outcome scale must be positive".into()));
        }
        Self::new(raw / sigma_y_given_t, sigma_u_given_t)
    }

    /// Residual variance of `ỹ` given `t` and `u`.
    pub fn residual_variance(&self) -> S {
        S::one() - self.r2
    }
}

/// Copula density as a function of `(p, q)` on `(0,1)^{1+m}`.
pub type CopulaDensity = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Outcome–confounder copula.
#[derive(Clone)]
pub enum CopulaSpec {
    Gaussian(SensitivitySpec<f64>),
    /// User-supplied density; must be nonnegative and integrate to 1 over `q`.
    Custom(CopulaDensity),
}

impl std::fmt::Debug for CopulaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CopulaSpec::Gaussian(s) => f.debug_tuple("Gaussian").field(s).finish(),
            CopulaSpec::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Gaussian copula density between `ỹ` and `U | t`, with `U`'s own dependence
/// factored out: `c = N(ỹ; γᵀ(u − μ), 1 − γᵀΣγ) / φ(ỹ)` evaluated at
/// `ỹ = Φ⁻¹(p)`, `u_j − μ_j = √Σ_jj · Φ⁻¹(q_j)`.
pub fn gaussian_copula_density<S: Real>(gamma: &DVector<S>, sigma_u_given_t: &DMatrix<S>, p: f64, q: &[f64]) -> Result<f64> {
    let m = gamma.len();
    dim_check("copula argument", m, q.len())?;
    dim_check("confounder covariance", m, sigma_u_given_t.nrows())?;
    if !(p > 0.0 && p < 1.0) || q.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Domain("copula arguments must lie strictly inside (0, 1)".into()));
    }
    let g: Vec<f64> = gamma.iter().map(|v| v.f64()).collect();
    let sigma = sigma_u_given_t.map(|v| v.f64());
    let s2 = 1.0 - (&sigma * DVector::from_vec(g.clone())).dot(&DVector::from_vec(g.clone()));
    if s2 <= 0.0 {
        return Err(Error::InvalidCopula(format!(
            "joint covariance of (ỹ, U) is singular: residual variance 1 − γᵀΣγ = {s2:e}"
        )));
    }
    let (vals, _) = sym_eigen_desc(&sigma);
    if vals[m - 1] < -1e-12 {
        return Err(Error::InvalidCopula(format!("Σ has negative eigenvalue {:e}", vals[m - 1])));
    }
    let y = normal::quantile(p);
    let shift: f64 = (0..m).map(|j| g[j] * sigma[(j, j)].max(0.0).sqrt() * normal::quantile(q[j])).sum();
    Ok(gaussian_kernel(y, shift, s2))
}

/// `N(y; shift, s2) / φ(y)`.
fn gaussian_kernel(y: f64, shift: f64, s2: f64) -> f64 {
    let r = y - shift;
    (-0.5 * r * r / s2 + 0.5 * y * y).exp() / s2.sqrt()
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    /// CDF values clamped into `[1e-15, 1 − 1e-15]`.
    pub clamped: usize,
    pub draws: usize,
}

/// Contrast of two intervention means from shared draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastEstimate {
    pub value: f64,
    pub se: f64,
    pub mean_t1: McEstimate,
    pub mean_t2: McEstimate,
}

/// How two intervention means combine into an effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauFn {
    Difference,
    Ratio,
}

/// Maps a latent normal draw through `F⁻¹_{Y|t}(Φ(·))`.
fn from_latent(law: &ConditionalLaw<'_>, z: f64) -> (f64, bool) {
    let (p, clamped) = normal::clamp_unit(normal::cdf(z));
    if let (ConditionalLaw::Gaussian { mean, sd }, false) = (law, clamped) {
        return (mean + sd * z, false);
    }
    (law.quantile_unchecked(p), clamped)
}

fn check_inputs(cc: &ConditionalConfounder<f64>, spec: &SensitivitySpec<f64>, outcome: &dyn OutcomeModel, t: &TreatmentMatrix<f64>) -> Result<()> {
    dim_check("sensitivity vector", cc.m(), spec.m())?;
    dim_check("observed treatment columns", cc.k(), t.ncols())?;
    dim_check("outcome model treatments", cc.k(), outcome.k())?;
    Ok(())
}

/// `γᵀ(μ_{u|tᵢ} − μ_{u|t})` for every observed row.
fn latent_shifts(cc: &ConditionalConfounder<f64>, gamma: &DVector<f64>, observed: &TreatmentMatrix<f64>, t: &DVector<f64>) -> Result<Vec<f64>> {
    dim_check("treatment vector", cc.k(), t.len())?;
    let g = cc.coef.transpose() * gamma;
    let at = g.dot(t);
    Ok((0..observed.nrows()).map(|i| observed.data().row(i).transpose().dot(&g) - at).collect())
}

fn row_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Default, Clone, Copy)]
struct RowSums {
    s1: f64,
    s2: f64,
    q1: f64,
    q2: f64,
    cross: f64,
    clamp1: usize,
    clamp2: usize,
}

/// Runs the per-row draws for one or two targets sharing the same latent
/// normals. Row `i` always draws from stream `i`, so results do not depend on
/// thread scheduling.
fn simulate_rows(
    shifts1: &[f64],
    law1: &ConditionalLaw<'_>,
    second: Option<(&[f64], &ConditionalLaw<'_>)>,
    v: &(dyn Fn(f64) -> f64 + Sync),
    n_sim: usize,
    seed: u64,
) -> Vec<RowSums> {
    shifts1
        .par_iter()
        .enumerate()
        .map(|(i, &mu1)| {
            let mut rng = row_rng(seed, i as u64);
            let mut acc = RowSums::default();
            for _ in 0..n_sim {
                let z: f64 = rng.sample(StandardNormal);
                let (y1, c1) = from_latent(law1, mu1 + z);
                let a = v(y1);
                acc.s1 += a;
                acc.q1 += a * a;
                acc.clamp1 += usize::from(c1);
                if let Some((shifts2, law2)) = second {
                    let (y2, c2) = from_latent(law2, shifts2[i] + z);
                    let b = v(y2);
                    acc.s2 += b;
                    acc.q2 += b * b;
                    acc.cross += a * b;
                    acc.clamp2 += usize::from(c2);
                }
            }
            acc
        })
        .collect()
}

/// Stratified mean and standard error: rows are strata of equal weight.
fn stratified(rows: &[RowSums], n_sim: usize, pick: impl Fn(&RowSums) -> (f64, f64)) -> (f64, f64) {
    let n = rows.len() as f64;
    let ns = n_sim as f64;
    let mut total = 0.0;
    let mut var = 0.0;
    for r in rows {
        let (s, q) = pick(r);
        let mean = s / ns;
        total += mean;
        if n_sim > 1 {
            let within = ((q - s * mean) / (ns - 1.0)).max(0.0);
            var += within / ns;
        }
    }
    (total / n, var.sqrt() / n)
}

fn warn_clamps(clamped: usize, draws: usize) {
    if clamped as f64 > CLAMP_WARN_FRACTION * draws as f64 {
        warn!("{clamped} of {draws} outcome CDF values were clamped into [1e-15, 1-1e-15]");
    }
}

/// Intervention mean `E[v(Y) | do(t)]` under the Gaussian copula.
///
/// For every observed row `tᵢ`, `ỹ ~ N(γᵀ(μ_{u|tᵢ} − μ_{u|t}), 1)` is drawn
/// `n_sim` times and mapped to `y = F⁻¹_{Y|t}(Φ(ỹ))`.
#[allow(clippy::too_many_arguments)]
pub fn intervention_mean_gaussian(
    t: &DVector<f64>,
    spec: &SensitivitySpec<f64>,
    cc: &ConditionalConfounder<f64>,
    outcome: &dyn OutcomeModel,
    observed: &TreatmentMatrix<f64>,
    v: &(dyn Fn(f64) -> f64 + Sync),
    n_sim: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_sim == 0 {
        return Err(Error::Precondition("n_sim must be at least 1".into()));
    }
    check_inputs(cc, spec, outcome, observed)?;
    let law = outcome.conditional(t)?;
    let shifts = latent_shifts(cc, &spec.gamma, observed, t)?;
    let rows = simulate_rows(&shifts, &law, None, v, n_sim, seed);
    let (mean, se) = stratified(&rows, n_sim, |r| (r.s1, r.q1));
    let clamped = rows.iter().map(|r| r.clamp1).sum();
    let draws = rows.len() * n_sim;
    warn_clamps(clamped, draws);
    Ok(McEstimate { mean, se, clamped, draws })
}

/// Effect of moving from `t2` to `t1`, both means sharing the same draws.
#[allow(clippy::too_many_arguments)]
pub fn marginal_contrast(
    c: &Contrast<f64>,
    spec: &SensitivitySpec<f64>,
    cc: &ConditionalConfounder<f64>,
    outcome: &dyn OutcomeModel,
    observed: &TreatmentMatrix<f64>,
    v: &(dyn Fn(f64) -> f64 + Sync),
    tau_fn: TauFn,
    n_sim: usize,
    seed: u64,
) -> Result<ContrastEstimate> {
    if n_sim == 0 {
        return Err(Error::Precondition("n_sim must be at least 1".into()));
    }
    check_inputs(cc, spec, outcome, observed)?;
    let (law1, law2) = (outcome.conditional(c.t1())?, outcome.conditional(c.t2())?);
    let shifts1 = latent_shifts(cc, &spec.gamma, observed, c.t1())?;
    let shifts2 = latent_shifts(cc, &spec.gamma, observed, c.t2())?;
    let rows = simulate_rows(&shifts1, &law1, Some((&shifts2, &law2)), v, n_sim, seed);
    let draws = rows.len() * n_sim;
    let (m1, se1) = stratified(&rows, n_sim, |r| (r.s1, r.q1));
    let (m2, se2) = stratified(&rows, n_sim, |r| (r.s2, r.q2));
    let clamp1 = rows.iter().map(|r| r.clamp1).sum();
    let clamp2 = rows.iter().map(|r| r.clamp2).sum();
    warn_clamps(clamp1 + clamp2, 2 * draws);
    let mean_t1 = McEstimate { mean: m1, se: se1, clamped: clamp1, draws };
    let mean_t2 = McEstimate { mean: m2, se: se2, clamped: clamp2, draws };

    // stratified covariance of the two row means
    let ns = n_sim as f64;
    let n = rows.len() as f64;
    let cov = if n_sim > 1 {
        rows.iter().map(|r| (r.cross - r.s1 * r.s2 / ns) / (ns - 1.0) / ns).sum::<f64>() / (n * n)
    } else {
        0.0
    };
    let (value, var) = match tau_fn {
        TauFn::Difference => (m1 - m2, se1 * se1 + se2 * se2 - 2.0 * cov),
        TauFn::Ratio => {
            if m2.abs() < 1e-12 {
                return Err(Error::DegenerateRatio { denominator: m2 });
            }
            let r = m1 / m2;
            let var = (se1 * se1 - 2.0 * r * cov + r * r * se2 * se2) / (m2 * m2);
            (r, var)
        }
    };
    Ok(ContrastEstimate { value, se: var.max(0.0).sqrt(), mean_t1, mean_t2 })
}

/// Importance-weighted intervention mean for an arbitrary copula.
///
/// Latent uniforms `p_k` give outcome draws `y_k = F⁻¹_{Y|t}(p_k)`; confounder
/// draws `u_ij ~ f(u | tᵢ)` (`n_u` per row) are shared across `k`, and
/// `w_k = mean_ij c(p_k, F_{U|t}(u_ij))`. The copula sees the latent `p_k`
/// rather than `F(y_k)`, which keeps discrete outcomes consistent.
#[allow(clippy::too_many_arguments)]
pub fn intervention_mean_general(
    t: &DVector<f64>,
    copula: &CopulaSpec,
    cc: &ConditionalConfounder<f64>,
    outcome: &dyn OutcomeModel,
    observed: &TreatmentMatrix<f64>,
    v: &(dyn Fn(f64) -> f64 + Sync),
    n_y: usize,
    n_u: usize,
    seed: u64,
) -> Result<WeightedEstimate> {
    if n_y == 0 || n_u == 0 {
        return Err(Error::Precondition("both sample sizes must be at least 1".into()));
    }
    let m = cc.m();
    dim_check("observed treatment columns", cc.k(), observed.ncols())?;
    dim_check("outcome model treatments", cc.k(), outcome.k())?;
    if let CopulaSpec::Gaussian(spec) = copula {
        dim_check("sensitivity vector", m, spec.m())?;
    }
    let law = outcome.conditional(t)?;
    let mu_t = cc.mean_given(t)?;
    let row_means = cc.means_for_rows(observed)?;
    let root = sym_sqrt(&cc.sigma_u_given_t);
    let sd: Vec<f64> = (0..m).map(|j| cc.sigma_u_given_t[(j, j)].max(0.0).sqrt()).collect();

    // u_ij − μ_{u|t}, row-major over (i, j)
    let offsets: Vec<DVector<f64>> = (0..observed.nrows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = row_rng(seed, i as u64);
            let base = row_means.row(i).transpose() - &mu_t;
            let root = &root;
            (0..n_u)
                .map(move |_| {
                    let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                    &base + root * z
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut y_rng = row_rng(seed, u64::MAX);
    let latent: Vec<f64> = (0..n_y).map(|_| y_rng.random::<f64>()).collect();

    let kernel: Box<dyn Fn(f64) -> f64 + Sync> = match copula {
        CopulaSpec::Gaussian(spec) => {
            let s2 = 1.0 - spec.r2;
            if s2 <= 0.0 {
                return Err(Error::InvalidCopula("γᵀΣγ = 1 leaves no residual variance".into()));
            }
            let shifts: Vec<f64> = offsets.iter().map(|o| spec.gamma.dot(o)).collect();
            Box::new(move |p: f64| {
                let y = normal::quantile(normal::clamp_unit(p).0);
                shifts.iter().map(|&a| gaussian_kernel(y, a, s2)).sum::<f64>() / shifts.len() as f64
            })
        }
        CopulaSpec::Custom(density) => {
            let qs: Vec<Vec<f64>> = offsets
                .iter()
                .map(|o| {
                    (0..m)
                        .map(|j| {
                            let z = if sd[j] > 0.0 { o[j] / sd[j] } else { 0.0 };
                            normal::clamp_unit(normal::cdf(z)).0
                        })
                        .collect()
                })
                .collect();
            let density = density.clone();
            Box::new(move |p: f64| {
                let p = normal::clamp_unit(p).0;
                qs.iter().map(|q| density(p, q)).sum::<f64>() / qs.len() as f64
            })
        }
    };

    let weighted: Vec<(f64, f64, bool)> = latent
        .par_iter()
        .map(|&p| {
            let (pc, clamped) = normal::clamp_unit(p);
            let y = law.quantile_unchecked(pc);
            (v(y), kernel(p), clamped)
        })
        .collect();

    let nf = n_y as f64;
    let w_mean = weighted.iter().map(|w| w.1).sum::<f64>() / nf;
    let vw: Vec<f64> = weighted.iter().map(|w| w.0 * w.1).collect();
    let est = vw.iter().sum::<f64>() / nf;
    let sd_of = |xs: &mut dyn Iterator<Item = f64>, mean: f64| -> f64 {
        if n_y < 2 {
            return 0.0;
        }
        (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt() / nf.sqrt()
    };
    let se = sd_of(&mut vw.iter().copied(), est);
    let w_se = sd_of(&mut weighted.iter().map(|w| w.1), w_mean);
    let clamped = weighted.iter().filter(|w| w.2).count();
    warn_clamps(clamped, n_y);
    let consistent = (w_mean - 1.0).abs() <= 5.0 * w_se || w_se == 0.0 && (w_mean - 1.0).abs() < 1e-12;
    if !consistent {
        warn!("importance weights average {w_mean:.6} (SE {w_se:.2e}); the copula density may not integrate to 1");
    }
    Ok(WeightedEstimate { estimate: McEstimate { mean: est, se, clamped, draws: n_y }, weight_mean: w_mean, weight_se: w_se, consistent })
}

/// Result of [`intervention_mean_general`] with the weight diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEstimate {
    pub estimate: McEstimate,
    pub weight_mean: f64,
    pub weight_se: f64,
    /// False when the weight mean is more than 5 SE away from 1.
    pub consistent: bool,
}

/// `Φ⁻¹(F_{Y|t}(y))`, clamping the CDF away from 0 and 1.
pub fn gaussianize(outcome: &dyn OutcomeModel, t: &DVector<f64>, y: f64) -> Result<f64> {
    let law = outcome.conditional(t)?;
    let (p, clamped) = normal::clamp_unit(law.cdf(y));
    if clamped {
        warn!("outcome CDF at y={y} clamped to {p:e}");
    }
    Ok(normal::quantile(p))
}

/// `F⁻¹_{Y|t}(Φ(ỹ))`, clamping `Φ(ỹ)` away from 0 and 1.
pub fn degaussianize(outcome: &dyn OutcomeModel, t: &DVector<f64>, ytilde: f64) -> Result<f64> {
    let law = outcome.conditional(t)?;
    let (y, clamped) = from_latent(&law, ytilde);
    if clamped {
        warn!("Φ({ytilde}) clamped before the outcome quantile");
    }
    Ok(y)
}

/// Uniform subsample of observed rows without replacement, in original order.
/// The intervention mixture over rows is then approximated by the subsample.
pub fn subsample_rows(observed: &TreatmentMatrix<f64>, size: usize, seed: u64) -> Result<TreatmentMatrix<f64>> {
    let n = observed.nrows();
    if size >= n {
        return Ok(observed.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    TreatmentMatrix::new(observed.data().select_rows(&idx), observed.column_names().map(<[String]>::to_vec))
}
