//! Seeded data generators with their ground truth.
//!
//! Every generator draws from a single ChaCha8 stream seeded by the caller,
//! row by row, so datasets are bitwise reproducible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::worst_case_bias;
use crate::error::{dim_check, Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::model::{conditional_confounder, row_major, Contrast, FactorModel, TreatmentMatrix};
use crate::normal;

/// How the outcome responds to treatments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Linear { tau: Vec<f64> },
    /// `g(t) = 3t₁ − t₂ + t₃·1{t₃>0} + 0.7 t₃·1{t₃≤0} − 0.06 t₄ − 4t₁²`.
    Nonlinear,
}

/// Parameters a dataset was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub b_true: DMatrix<f64>,
    pub sigma2_t_given_u: f64,
    pub sigma2_y_given_tu: f64,
    /// Raw-scale outcome loading on `U`.
    pub gamma_true: DVector<f64>,
    pub response: Response,
    pub binary_t: bool,
    pub binary_y: bool,
    /// Large-effect labels (GWAS design only).
    pub non_null: Option<Vec<bool>>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    k: usize,
    m: usize,
    b_true: Vec<f64>,
    sigma2_t_given_u: f64,
    sigma2_y_given_tu: f64,
    gamma_true: Vec<f64>,
    response: Response,
    binary_t: bool,
    binary_y: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    non_null: Option<Vec<bool>>,
    seed: u64,
}

impl SimTruth {
    pub fn k(&self) -> usize {
        self.b_true.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_true.ncols()
    }

    fn validate(&self) -> Result<()> {
        let (k, m) = self.b_true.shape();
        if k == 0 || m == 0 {
            return Err(Error::Dimension("loading matrix must be non-empty".into()));
        }
        dim_check("outcome loading", m, self.gamma_true.len())?;
        if !(self.sigma2_t_given_u > 0.0) || !(self.sigma2_y_given_tu > 0.0) {
            return Err(Error::Domain("simulation variances must be positive".into()));
        }
        match &self.response {
            Response::Linear { tau } => dim_check("effect vector", k, tau.len())?,
            Response::Nonlinear => dim_check("nonlinear response treatments", 4, k)?,
        }
        if let Some(labels) = &self.non_null {
            dim_check("effect labels", k, labels.len())?;
        }
        Ok(())
    }

    /// Four treatments, one confounder: `B = [2, 0.5, −0.4, 0.2]ᵀ`,
    /// `σ²_{t|u} = σ²_{y|t,u} = 1`, `γ = 2.8`, linear effects `(3, −1, 1, −0.06)`.
    pub fn four_treatment_linear(seed: u64) -> Self {
        Self {
            response: Response::Linear { tau: vec![3.0, -1.0, 1.0, -0.06] },
            ..Self::four_treatment_nonlinear(false, seed)
        }
    }

    /// Same design with the nonlinear response `g`.
    pub fn four_treatment_nonlinear(binary_y: bool, seed: u64) -> Self {
        Self {
            b_true: DMatrix::from_column_slice(4, 1, &[2.0, 0.5, -0.4, 0.2]),
            sigma2_t_given_u: 1.0,
            sigma2_y_given_tu: 1.0,
            gamma_true: DVector::from_element(1, 2.8),
            response: Response::Nonlinear,
            binary_t: false,
            binary_y,
            non_null: None,
            seed,
        }
    }

    /// Noise-free outcome mean `g(t)` before the confounder enters.
    pub fn response_at(&self, t: &[f64]) -> Result<f64> {
        dim_check("treatment vector", self.k(), t.len())?;
        Ok(match &self.response {
            Response::Linear { tau } => tau.iter().zip(t).map(|(a, b)| a * b).sum(),
            Response::Nonlinear => nonlinear_g(t),
        })
    }

    /// Standard deviation of `γᵀU + ε` with `U ~ N(0, I)`.
    fn latent_sd(&self) -> f64 {
        (self.gamma_true.norm_squared() + self.sigma2_y_given_tu).sqrt()
    }

    /// `E[Y | do(t)]`: `g(t)` for Gaussian outcomes, `Φ(g(t)/sd)` for binary ones.
    pub fn intervention_mean(&self, t: &[f64]) -> Result<f64> {
        let g = self.response_at(t)?;
        Ok(if self.binary_y { normal::cdf(g / self.latent_sd()) } else { g })
    }

    /// True effect of `t1` against `t2` on the difference scale.
    pub fn pate(&self, t1: &[f64], t2: &[f64]) -> Result<f64> {
        Ok(self.intervention_mean(t1)? - self.intervention_mean(t2)?)
    }

    /// True risk ratio of `t1` against `t2` (binary outcomes).
    pub fn risk_ratio(&self, t1: &[f64], t2: &[f64]) -> Result<f64> {
        if !self.binary_y {
            return Err(Error::Precondition("risk ratios need a binary outcome".into()));
        }
        Ok(self.intervention_mean(t1)? / self.intervention_mean(t2)?)
    }

    /// Monte Carlo estimate of `E[Y | do(t)]` over fresh `U` and noise, with
    /// its standard error. An oracle for [`SimTruth::intervention_mean`].
    pub fn intervention_mean_mc(&self, t: &[f64], draws: usize, seed: u64) -> Result<(f64, f64)> {
        let g = self.response_at(t)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s, mut q) = (0.0, 0.0);
        for _ in 0..draws {
            let u: f64 = self.gamma_true.iter().map(|gj| gj * rng.sample::<f64, _>(StandardNormal)).sum();
            let e: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma2_y_given_tu.sqrt();
            let ylat = g + u + e;
            let y = if self.binary_y { f64::from(u8::from(ylat > 0.0)) } else { ylat };
            s += y;
            q += y * y;
        }
        let n = draws as f64;
        let mean = s / n;
        Ok((mean, ((q / n - mean * mean).max(0.0) / (n - 1.0)).sqrt()))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TruthFile {
            k: self.k(),
            m: self.m(),
            b_true: row_major(&self.b_true),
            sigma2_t_given_u: self.sigma2_t_given_u,
            sigma2_y_given_tu: self.sigma2_y_given_tu,
            gamma_true: self.gamma_true.iter().copied().collect(),
            response: self.response.clone(),
            binary_t: self.binary_t,
            binary_y: self.binary_y,
            non_null: self.non_null.clone(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TruthFile = serde_json::from_str(text)?;
        if f.b_true.len() != f.k * f.m {
            return Err(Error::Malformed(format!("b_true has {} entries, expected {}", f.b_true.len(), f.k * f.m)));
        }
        let truth = Self {
            b_true: DMatrix::from_row_slice(f.k, f.m, &f.b_true),
            sigma2_t_given_u: f.sigma2_t_given_u,
            sigma2_y_given_tu: f.sigma2_y_given_tu,
            gamma_true: DVector::from_vec(f.gamma_true),
            response: f.response,
            binary_t: f.binary_t,
            binary_y: f.binary_y,
            non_null: f.non_null,
            seed: f.seed,
        };
        truth.validate()?;
        Ok(truth)
    }
}

pub fn nonlinear_g(t: &[f64]) -> f64 {
    let t3 = if t[2] > 0.0 { t[2] } else { 0.7 * t[2] };
    3.0 * t[0] - t[1] + t3 - 0.06 * t[3] - 4.0 * t[0] * t[0]
}

/// A generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub t: TreatmentMatrix<f64>,
    pub y: DVector<f64>,
    /// Latent confounders, n×m.
    pub u: DMatrix<f64>,
    pub truth: SimTruth,
}

/// Draws `n` rows of `U ~ N(0, I)`, `T̃ = BU + ε`, `T = h(T̃)`,
/// `Ỹ = g(T) + γᵀU + ε`, `Y = h(Ỹ)`.
pub fn generate(truth: &SimTruth, n: usize) -> Result<SimData> {
    truth.validate()?;
    if n < 2 {
        return Err(Error::Precondition("at least two rows are required".into()));
    }
    let (k, m) = truth.b_true.shape();
    let st = truth.sigma2_t_given_u.sqrt();
    let sy = truth.sigma2_y_given_tu.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);
    let mut t = DMatrix::zeros(n, k);
    let mut u = DMatrix::zeros(n, m);
    let mut y = DVector::zeros(n);
    let mut row = vec![0.0; k];
    for i in 0..n {
        for j in 0..m {
            u[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
        let ui = u.row(i).transpose();
        for (j, tj) in row.iter_mut().enumerate() {
            let latent = truth.b_true.row(j).transpose().dot(&ui) + st * rng.sample::<f64, _>(StandardNormal);
            *tj = if truth.binary_t { f64::from(u8::from(latent > 0.0)) } else { latent };
            t[(i, j)] = *tj;
        }
        let ylat = truth.response_at(&row)? + truth.gamma_true.dot(&ui) + sy * rng.sample::<f64, _>(StandardNormal);
        y[i] = if truth.binary_y { f64::from(u8::from(ylat > 0.0)) } else { ylat };
    }
    Ok(SimData { t: TreatmentMatrix::new(t, None)?, y, u, truth: truth.clone() })
}

/// Linear-Gaussian data: `T = BU + ε_t`, `Y = τᵀT + γᵀU + ε_y`.
pub fn gen_linear_gaussian(truth: &SimTruth, n: usize) -> Result<SimData> {
    if !matches!(truth.response, Response::Linear { .. }) || truth.binary_t || truth.binary_y {
        return Err(Error::Precondition("linear-Gaussian generation needs a linear response with continuous T and Y".into()));
    }
    generate(truth, n)
}

/// The four-treatment nonlinear design, Gaussian or thresholded outcome.
pub fn gen_nonlinear(n: usize, binary_y: bool, seed: u64) -> Result<SimData> {
    generate(&SimTruth::four_treatment_nonlinear(binary_y, seed), n)
}

/// Settings of the sparse-effect binary-treatment design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwasConfig {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    /// Share of effects drawn from `U(−2, 2)`; the rest come from `U(−0.1, 0.1)`.
    pub frac_large: f64,
    /// Standard deviation of each entry of the treatment loading `B`.
    pub loading_scale: f64,
    /// Standard deviation of each entry of the raw outcome loading `γ`.
    pub gamma_scale: f64,
    pub sigma2_t_given_u: f64,
    pub sigma2_y_given_tu: f64,
    pub seed: u64,
}

impl Default for GwasConfig {
    fn default() -> Self {
        Self { n: 1000, k: 100, m: 3, frac_large: 0.1, loading_scale: 0.5, gamma_scale: 20.0, sigma2_t_given_u: 1.0, sigma2_y_given_tu: 1.0, seed: 0 }
    }
}

/// Binary treatments `T_j = 1{T̃_j > 0}` with `B` entries `N(0, loading_scale²)`, linear
/// outcome with `⌈frac_large·k⌉` large effects at random positions.
pub fn gen_gwas_with(cfg: &GwasConfig) -> Result<SimData> {
    if !(0.0..=1.0).contains(&cfg.frac_large) {
        return Err(Error::Domain(format!("frac_large must lie in [0, 1], got {}", cfg.frac_large)));
    }
    if cfg.m == 0 || cfg.k <= cfg.m {
        return Err(Error::NonIdentifiable { m: cfg.m, k: cfg.k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let b = DMatrix::from_fn(cfg.k, cfg.m, |_, _| cfg.loading_scale * rng.sample::<f64, _>(StandardNormal));
    let gamma = DVector::from_fn(cfg.m, |_, _| cfg.gamma_scale * rng.sample::<f64, _>(StandardNormal));
    let n_large = (cfg.frac_large * cfg.k as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..cfg.k).collect();
    for i in (1..cfg.k).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut labels = vec![false; cfg.k];
    for &j in &order[..n_large] {
        labels[j] = true;
    }
    let tau = labels.iter().map(|&large| if large { rng.random_range(-2.0..2.0) } else { rng.random_range(-0.1..0.1) }).collect();
    let truth = SimTruth {
        b_true: b,
        sigma2_t_given_u: cfg.sigma2_t_given_u,
        sigma2_y_given_tu: cfg.sigma2_y_given_tu,
        gamma_true: gamma,
        response: Response::Linear { tau },
        binary_t: true,
        binary_y: false,
        non_null: Some(labels),
        seed: rng.random(),
    };
    generate(&truth, cfg.n)
}

pub fn gen_gwas(n: usize, k: usize, m: usize, frac_large: f64, seed: u64) -> Result<SimData> {
    gen_gwas_with(&GwasConfig { n, k, m, frac_large, seed, ..GwasConfig::default() })
}

/// Area under the ROC curve of `scores` for the positive `labels`, with ties
/// counted half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    dim_check("labels", scores.len(), labels.len())?;
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Precondition("AUC needs both positive and negative labels".into()));
    }
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Worst-case bound along contrasts rotating from the leading loading
/// direction to the loading null space.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSweep {
    /// `(θ, bound)` rows.
    pub rows: Vec<(f64, f64)>,
    /// Leading left singular vector of `B`.
    pub u1: DVector<f64>,
    /// Unit vector orthogonal to every column of `B`.
    pub n0: DVector<f64>,
}

/// `Δt(θ) = cos θ·u₁ + sin θ·n₀` for `n_theta` angles evenly spaced over
/// `[0, π/2]`, each scored by the worst-case bias at `r2`.
pub fn rotation_sweep(fm: &FactorModel<f64>, sigma_y_given_t: f64, r2: f64, n_theta: usize) -> Result<RotationSweep> {
    if n_theta < 2 {
        return Err(Error::Precondition("a sweep needs at least two angles".into()));
    }
    let (k, m) = (fm.k(), fm.m);
    let (_, vecs) = sym_eigen_desc(&(&fm.b_hat * fm.b_hat.transpose()));
    let orient = |v: DVector<f64>| {
        let mut idx = 0;
        for i in 1..v.len() {
            if v[i].abs() > v[idx].abs() {
                idx = i;
            }
        }
        if v[idx] < 0.0 { -v } else { v }
    };
    let u1 = orient(vecs.column(0).into_owned());
    let n0 = orient(vecs.column(m).into_owned());
    let cc = conditional_confounder(fm)?;
    let zero = DVector::zeros(k);
    let rows = (0..n_theta)
        .map(|i| {
            let theta = std::f64::consts::FRAC_PI_2 * i as f64 / (n_theta - 1) as f64;
            let dt = &u1 * theta.cos() + &n0 * theta.sin();
            let bias = worst_case_bias(&cc, sigma_y_given_t, r2, &Contrast::new(dt, zero.clone())?)?;
            Ok((theta, bias.or_infinity()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RotationSweep { rows, u1, n0 })
}

/// Parameters of the single-treatment proxy design
/// `U ~ N(0, σ_u²)`, `Z = U + ε_z`, `T = βU + ε_t`, `Y = τT + γU + ε_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyParams {
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub sigma2_u: f64,
    pub sigma2_z: f64,
    pub sigma2_t: f64,
    pub sigma2_y: f64,
}

impl Default for ProxyParams {
    fn default() -> Self {
        Self { beta: 1.0, gamma: 1.0, tau: 0.5, sigma2_u: 0.5, sigma2_z: 0.5, sigma2_t: 1.0, sigma2_y: 1.0 }
    }
}

impl ProxyParams {
    fn scaled(&self) -> f64 {
        self.beta * self.beta * self.sigma2_u * self.sigma2_z + self.sigma2_t * self.sigma2_u + self.sigma2_t * self.sigma2_z
    }

    /// Population coefficient of standardized `Z` in the regression of `T` on `Z`.
    pub fn tilde_beta(&self) -> f64 {
        self.beta * self.sigma2_u / (self.sigma2_u + self.sigma2_z).sqrt()
    }

    /// Population coefficient of `T` in the regression of `Y` on `(T, Z)`.
    pub fn tilde_tau(&self) -> f64 {
        self.tau + self.gamma * self.beta * self.sigma2_u * self.sigma2_z / self.scaled()
    }

    /// Population coefficient of standardized `Z` in the regression of `Y` on `(T, Z)`.
    pub fn tilde_gamma(&self) -> f64 {
        self.gamma * self.sigma2_u * self.sigma2_t / self.scaled() * (self.sigma2_u + self.sigma2_z).sqrt()
    }

    /// `σ_u²` on the scale where `Var(Z) = 1`.
    pub fn standardized_sigma2_u(&self) -> f64 {
        self.sigma2_u / (self.sigma2_u + self.sigma2_z)
    }
}

/// Proxy-design sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyData {
    pub y: DVector<f64>,
    pub t: DVector<f64>,
    pub z: DVector<f64>,
    pub params: ProxyParams,
}

pub fn gen_proxy(params: &ProxyParams, n: usize, seed: u64) -> Result<ProxyData> {
    let vars = [params.sigma2_u, params.sigma2_z, params.sigma2_t, params.sigma2_y];
    if vars.iter().any(|v| !(*v >= 0.0)) || params.sigma2_u <= 0.0 {
        return Err(Error::Domain("proxy variances must be non-negative with σ_u² > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut y, mut t, mut z) = (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n));
    for i in 0..n {
        let mut draw = |v: f64| v.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let u = draw(params.sigma2_u);
        z[i] = u + draw(params.sigma2_z);
        t[i] = params.beta * u + draw(params.sigma2_t);
        y[i] = params.tau * t[i] + params.gamma * u + draw(params.sigma2_y);
    }
    Ok(ProxyData { y, t, z, params: *params })
}

/// Named datasets offered on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Linear,
    Nonlinear,
    NonlinearBinary,
    Gwas,
    Proxy,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Linear, Preset::Nonlinear, Preset::NonlinearBinary, Preset::Gwas, Preset::Proxy];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Linear => "linear",
            Preset::Nonlinear => "nonlinear",
            Preset::NonlinearBinary => "nonlinear-binary",
            Preset::Gwas => "gwas",
            Preset::Proxy => "proxy",
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            Preset::Linear | Preset::Nonlinear | Preset::NonlinearBinary => 2000,
            Preset::Gwas => 1000,
            Preset::Proxy => 1000,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown preset {s:?}; expected one of linear, nonlinear, nonlinear-binary, gwas, proxy")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{covariance_ml, ols};
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    #[test]
    fn reproducible_under_seed() {
        let a = gen_gwas(200, 20, 2, 0.1, 7).unwrap();
        let b = gen_gwas(200, 20, 2, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_gwas(200, 20, 2, 0.1, 8).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn linear_without_confounding_recovers_tau() {
        let mut truth = SimTruth::four_treatment_linear(3);
        truth.gamma_true = dvector![0.0];
        let data = gen_linear_gaussian(&truth, 5000).unwrap();
        let fit = ols(data.t.data(), &data.y, true).unwrap();
        let se = fit.std_errors();
        let Response::Linear { tau } = &truth.response else { unreachable!() };
        for j in 0..4 {
            assert!((fit.coef[j + 1] - tau[j]).abs() < 3.0 * se[j + 1], "coef {j}");
        }
    }

    #[test]
    fn naive_coefficients_match_closed_form() {
        // τ_naive = τ + γ·coef with coef = Bᵀ/(σ² + ‖B‖²)
        let truth = SimTruth::four_treatment_linear(4);
        let data = gen_linear_gaussian(&truth, 20_000).unwrap();
        let fit = ols(data.t.data(), &data.y, true).unwrap();
        let se = fit.std_errors();
        let b = [2.0, 0.5, -0.4, 0.2];
        let tau = [3.0, -1.0, 1.0, -0.06];
        for j in 0..4 {
            let expected = tau[j] + 2.8 * b[j] / 5.45;
            assert!((fit.coef[j + 1] - expected).abs() < 3.0 * se[j + 1], "coef {j}: {} vs {expected}", fit.coef[j + 1]);
        }
    }

    #[test]
    fn treatment_covariance_matches_factor_structure() {
        let truth = SimTruth::four_treatment_linear(5);
        let data = gen_linear_gaussian(&truth, 50_000).unwrap();
        let (_, cov) = covariance_ml(data.t.data());
        let target = &truth.b_true * truth.b_true.transpose() + DMatrix::identity(4, 4);
        // entrywise sampling sd of a covariance is below sqrt(2 * 6 * 6 / n)
        assert!((cov - &target).amax() < 4.0 * (72.0f64 / 50_000.0).sqrt());
    }

    #[test]
    fn closed_form_truth_agrees_with_monte_carlo() {
        for binary in [false, true] {
            let truth = SimTruth::four_treatment_nonlinear(binary, 0);
            for t in [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [0.0; 4]] {
                let exact = truth.intervention_mean(&t).unwrap();
                let (mc, se) = truth.intervention_mean_mc(&t, 1_000_000, 11).unwrap();
                assert!((mc - exact).abs() < 3.0 * se, "{binary} {t:?}: {mc} vs {exact}");
            }
        }
    }

    #[test]
    fn unit_contrast_effects() {
        let truth = SimTruth::four_treatment_nonlinear(false, 0);
        let zero = [0.0; 4];
        let effects: Vec<f64> = (0..4)
            .map(|i| {
                let mut e = [0.0; 4];
                e[i] = 1.0;
                truth.pate(&e, &zero).unwrap()
            })
            .collect();
        for (a, b) in effects.iter().zip([-1.0, -1.0, 1.0, -0.06]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn gwas_labels_and_null_effects() {
        let data = gen_gwas(50, 100, 3, 0.1, 1).unwrap();
        assert_eq!(data.truth.non_null.as_ref().unwrap().iter().filter(|&&l| l).count(), 10);
        let data = gen_gwas(50, 100, 3, 0.0, 1).unwrap();
        let Response::Linear { tau } = &data.truth.response else { unreachable!() };
        assert!(data.truth.non_null.unwrap().iter().all(|l| !l));
        assert!(tau.iter().all(|v| v.abs() < 0.1));
        assert!(data.t.data().iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn gwas_treatments_are_balanced() {
        let data = gen_gwas(4000, 30, 3, 0.1, 2).unwrap();
        for j in 0..30 {
            let p = data.t.data().column(j).mean();
            assert!((p - 0.5).abs() < 4.0 * (0.25f64 / 4000.0).sqrt(), "column {j}: {p}");
        }
    }

    #[test]
    fn truth_json_round_trip() {
        let data = gen_gwas(10, 12, 2, 0.25, 3).unwrap();
        let back = SimTruth::from_json(&data.truth.to_json().unwrap()).unwrap();
        assert_eq!(back, data.truth);
        let nl = SimTruth::four_treatment_nonlinear(true, 9);
        assert_eq!(SimTruth::from_json(&nl.to_json().unwrap()).unwrap(), nl);
    }

    #[test]
    fn auc_extremes() {
        let labels = [true, true, false, false];
        assert_eq!(auc(&[3.0, 4.0, 1.0, 2.0], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &labels).unwrap(), 0.0);
        assert_eq!(auc(&[1.0; 4], &labels).unwrap(), 0.5);
    }

    #[test]
    fn rotation_sweep_endpoints() {
        let truth = SimTruth::four_treatment_linear(0);
        let fm = FactorModel::from_parts(truth.b_true.clone(), 1.0, None).unwrap();
        let sy = 2.4385f64.sqrt();
        let sweep = rotation_sweep(&fm, sy, 0.7, 9).unwrap();
        let d2 = 5.45 - 1.0;
        let expected = (d2 / (d2 + 1.0) * sy * sy * 0.7).sqrt();
        assert!((sweep.rows[0].1 - expected).abs() < 1e-10);
        assert!(sweep.rows[8].1.abs() < 1e-10);
        for w in sweep.rows.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
        }
        assert!((truth.b_true.transpose() * &sweep.n0).norm() < 1e-12);
    }

    #[test]
    fn proxy_population_coefficients() {
        let p = ProxyParams::default();
        assert_relative_eq!(p.tilde_beta(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(p.tilde_gamma(), 0.4, epsilon = 1e-15);
        assert_relative_eq!(p.tilde_tau(), 0.7, epsilon = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn generators_are_deterministic(seed in any::<u64>(), binary in any::<bool>()) {
            let a = gen_nonlinear(50, binary, seed).unwrap();
            let b = gen_nonlinear(50, binary, seed).unwrap();
            prop_assert_eq!(a.y.as_slice(), b.y.as_slice());
            prop_assert_eq!(a.t.data(), b.t.data());
            let p = gen_proxy(&ProxyParams::default(), 30, seed).unwrap();
            prop_assert_eq!(p, gen_proxy(&ProxyParams::default(), 30, seed).unwrap());
        }

        #[test]
        fn binary_outcomes_are_indicators(seed in any::<u64>()) {
            let d = gen_nonlinear(40, true, seed).unwrap();
            prop_assert!(d.y.iter().all(|v| *v == 0.0 || *v == 1.0));
        }
    }
}
