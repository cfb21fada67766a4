//! Treatment factor model and the conditional confounder distribution.
//!
//! Treatments follow `T = B U + ε` with `U ~ N(0, I_m)` and isotropic noise.
//! The probabilistic-PCA fit recovers `B` up to rotation, which is all the
//! downstream sensitivity quantities depend on.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{covariance_ml, psd_rank, sym_eigen_desc, symmetrize};
use crate::num::Real;

/// Observed treatments, one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentMatrix<S: Real> {
    data: DMatrix<S>,
    column_names: Option<Vec<String>>,
}

impl<S: Real> TreatmentMatrix<S> {
    pub fn new(data: DMatrix<S>, column_names: Option<Vec<String>>) -> Result<Self> {
        if data.nrows() < 2 || data.ncols() < 1 {
            return Err(Error::Precondition(format!(
                "treatment matrix needs n >= 2 rows and k >= 1 columns, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some((idx, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % data.nrows(), idx / data.nrows());
            return Err(Error::Malformed(format!("non-finite treatment at row {row}, column {col}")));
        }
        if let Some(names) = &column_names {
            dim_check("column names", data.ncols(), names.len())?;
        }
        Ok(Self { data, column_names })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("ragged treatment rows".into()));
        }
        Self::new(DMatrix::from_fn(n, k, |i, j| rows[i][j]), None)
    }

    pub fn data(&self) -> &DMatrix<S> {
        &self.data
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn row(&self, i: usize) -> DVector<S> {
        self.data.row(i).transpose()
    }

    pub fn column_means(&self) -> DVector<S> {
        crate::linalg::column_means(&self.data)
    }
}

/// Fitted treatment factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel<S: Real> {
    /// k×m loadings, defined up to an orthogonal rotation of the columns.
    pub b_hat: DMatrix<S>,
    pub sigma2_t_given_u: S,
    pub m: usize,
    /// Singular values of `b_hat`, descending.
    pub singular_values: DVector<S>,
    /// Column means of the treatments the model was fit on.
    pub treatment_means: DVector<S>,
    /// Full descending eigenvalue spectrum of the sample covariance (empty
    /// when the model was built from exact parameters).
    pub eigenvalues: DVector<S>,
}

impl<S: Real> FactorModel<S> {
    /// Builds a model from known parameters. Loadings are used as given.
    pub fn from_parts(b: DMatrix<S>, sigma2_t_given_u: S, treatment_means: Option<DVector<S>>) -> Result<Self> {
        let (k, m) = b.shape();
        if m == 0 || m >= k {
            return Err(Error::NonIdentifiable { m, k });
        }
        if sigma2_t_given_u <= S::zero() || !sigma2_t_given_u.is_finite() {
            return Err(Error::InvalidModel(format!("noise variance must be positive, got {sigma2_t_given_u}")));
        }
        let means = treatment_means.unwrap_or_else(|| DVector::zeros(k));
        dim_check("treatment means", k, means.len())?;
        let mut singular_values = b.clone().svd(false, false).singular_values;
        singular_values.as_mut_slice().sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Ok(Self {
            b_hat: b,
            sigma2_t_given_u,
            m,
            singular_values,
            treatment_means: means,
            eigenvalues: DVector::zeros(0),
        })
    }

    pub fn k(&self) -> usize {
        self.b_hat.nrows()
    }

    /// `B Bᵀ + σ² I`.
    pub fn implied_covariance(&self) -> DMatrix<S> {
        let k = self.k();
        &self.b_hat * self.b_hat.transpose() + DMatrix::identity(k, k) * self.sigma2_t_given_u
    }
}

/// Maximum-likelihood probabilistic PCA on the (internally centered) treatments.
pub fn fit_ppca<S: Real>(t: &TreatmentMatrix<S>, m: usize) -> Result<FactorModel<S>> {
    let (n, k) = (t.nrows(), t.ncols());
    if m == 0 || m >= k {
        return Err(Error::NonIdentifiable { m, k });
    }
    if n <= k {
        warn!("fitting a {k}-treatment factor model on only {n} rows; the sample covariance is singular");
    }
    let (means, cov) = covariance_ml(t.data());
    fit_ppca_from_covariance(&cov, means, m)
}

/// Probabilistic PCA from a given treatment covariance and mean vector.
pub fn fit_ppca_from_covariance<S: Real>(cov: &DMatrix<S>, means: DVector<S>, m: usize) -> Result<FactorModel<S>> {
    let k = cov.nrows();
    if cov.ncols() != k {
        return Err(Error::Dimension(format!("covariance must be square, got {}x{}", k, cov.ncols())));
    }
    dim_check("treatment means", k, means.len())?;
    if m == 0 || m >= k {
        return Err(Error::NonIdentifiable { m, k });
    }
    let (values, vectors) = sym_eigen_desc(&symmetrize(cov));
    let trailing = values.rows(m, k - m);
    let sigma2 = trailing.sum() / S::of_usize(k - m);
    if sigma2 <= S::zero() {
        return Err(Error::InvalidModel(format!(
            "mean trailing eigenvalue {sigma2} is not positive; the treatments lie in an {m}-dimensional subspace"
        )));
    }
    let mut b = DMatrix::zeros(k, m);
    let mut singular_values = DVector::zeros(m);
    for i in 0..m {
        let excess = values[i] - sigma2;
        if excess <= S::zero() {
            return Err(Error::DegenerateLoading { index: i + 1, excess: excess.f64() });
        }
        let d = excess.sqrt();
        singular_values[i] = d;
        let mut col = vectors.column(i) * d;
        orient(&mut col);
        b.set_column(i, &col);
    }
    Ok(FactorModel {
        b_hat: b,
        sigma2_t_given_u: sigma2,
        m,
        singular_values,
        treatment_means: means,
        eigenvalues: values,
    })
}

/// Largest-magnitude entry made positive; ties resolved toward the lowest index.
fn orient<S: Real>(col: &mut DVector<S>) {
    let mut best = 0;
    for i in 1..col.len() {
        if col[i].abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < S::zero() {
        col.neg_mut();
    }
}

/// Rule used by [`select_dim`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimMethod {
    /// Largest relative drop between consecutive eigenvalues.
    EigenGap,
    /// Held-out Gaussian likelihood under 5-fold row splits.
    Holdout,
}

/// Picks the confounder dimension.
///
/// Before either rule runs, the spectrum is checked for any factor
/// structure at all: the top eigenvalue, relative to the average one, is
/// compared with the upper edge of the Marchenko–Pastur law plus four
/// Tracy–Widom scale units. Pure noise stays under that edge.
pub fn select_dim<S: Real>(t: &TreatmentMatrix<S>, method: DimMethod) -> Result<usize> {
    let (n, k) = (t.nrows(), t.ncols());
    if k < 3 {
        return Err(Error::Precondition(format!("dimension selection needs k >= 3 treatments, got {k}")));
    }
    let (_, cov) = covariance_ml(t.data());
    let (values, _) = sym_eigen_desc(&cov);
    let vals: Vec<f64> = values.iter().map(|v| v.f64()).collect();
    check_structure(&vals, n)?;
    match method {
        DimMethod::EigenGap => Ok(eigen_gap(&vals)),
        DimMethod::Holdout => holdout(t),
    }
}

fn check_structure(vals: &[f64], n: usize) -> Result<()> {
    let k = vals.len();
    let (top, bottom) = (vals[0], vals[k - 1]);
    if top - bottom <= 1e-9 * top.abs().max(1.0) {
        return Err(Error::NoStructure("all covariance eigenvalues coincide".into()));
    }
    let mean = vals.iter().sum::<f64>() / k as f64;
    let (nf, kf) = (n as f64, k as f64);
    let edge = (1.0 + (kf / nf).sqrt()).powi(2);
    let tw_scale = (nf.sqrt() + kf.sqrt()) * (1.0 / nf.sqrt() + 1.0 / kf.sqrt()).powf(1.0 / 3.0) / nf;
    let threshold = edge + 4.0 * tw_scale;
    let ratio = top / mean;
    if ratio <= threshold {
        return Err(Error::NoStructure(format!(
            "top eigenvalue is {ratio:.4} times the mean, within the pure-noise edge {threshold:.4}"
        )));
    }
    Ok(())
}

fn eigen_gap(vals: &[f64]) -> usize {
    let k = vals.len();
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..=k - 2 {
        let gap = (vals[i - 1] - vals[i]) / vals[i].max(f64::MIN_POSITIVE);
        if gap > best.1 {
            best = (i, gap);
        }
    }
    best.0
}

const HOLDOUT_FOLDS: usize = 5;

fn holdout<S: Real>(t: &TreatmentMatrix<S>) -> Result<usize> {
    let (n, k) = (t.nrows(), t.ncols());
    if n < 2 * HOLDOUT_FOLDS {
        return Err(Error::Precondition(format!("holdout selection needs at least {} rows", 2 * HOLDOUT_FOLDS)));
    }
    let data: DMatrix<f64> = t.data().map(|v| v.f64());
    let mut folds = Vec::with_capacity(HOLDOUT_FOLDS);
    for f in 0..HOLDOUT_FOLDS {
        let train: Vec<usize> = (0..n).filter(|i| i % HOLDOUT_FOLDS != f).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % HOLDOUT_FOLDS == f).collect();
        let (means, cov) = covariance_ml(&data.select_rows(&train));
        let (values, vectors) = sym_eigen_desc(&cov);
        folds.push((test, means, values, vectors));
    }
    let mut best = (1, f64::INFINITY);
    for m in 1..k {
        let mut total = 0.0;
        let mut count = 0usize;
        for (test, means, values, vectors) in &folds {
            let sigma2 = values.rows(m, k - m).sum() / (k - m) as f64;
            if sigma2 <= 0.0 || values[m - 1] <= sigma2 {
                total = f64::INFINITY;
                break;
            }
            // C = V Λ_m Vᵀ + σ²(I − V Vᵀ) on the top-m eigenvectors
            let log_det = values.rows(0, m).iter().map(|v| v.ln()).sum::<f64>() + (k - m) as f64 * sigma2.ln();
            let v = vectors.columns(0, m);
            for &i in test {
                let x = data.row(i).transpose() - means;
                let proj = v.transpose() * &x;
                let mut quad = (x.norm_squared() - proj.norm_squared()) / sigma2;
                for j in 0..m {
                    quad += proj[j] * proj[j] / values[j];
                }
                total += 0.5 * (log_det + quad + k as f64 * (2.0 * std::f64::consts::PI).ln());
                count += k;
            }
        }
        let score = total / count.max(1) as f64;
        if score < best.1 {
            best = (m, score);
        }
    }
    Ok(best.0)
}

/// Law of the latent confounder given treatments: `U | t ~ N(coef (t − means), Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalConfounder<S: Real> {
    /// m×k map from centered treatments to the conditional mean.
    pub coef: DMatrix<S>,
    pub sigma_u_given_t: DMatrix<S>,
    pub rank: usize,
    pub treatment_means: DVector<S>,
}

impl<S: Real> ConditionalConfounder<S> {
    /// Validates and symmetrizes externally supplied parameters.
    pub fn new(coef: DMatrix<S>, sigma_u_given_t: DMatrix<S>, treatment_means: Option<DVector<S>>) -> Result<Self> {
        let (m, k) = coef.shape();
        if m == 0 || k == 0 {
            return Err(Error::Dimension("confounder map must be non-empty".into()));
        }
        if sigma_u_given_t.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "confounder covariance must be {m}x{m}, got {}x{}",
                sigma_u_given_t.nrows(),
                sigma_u_given_t.ncols()
            )));
        }
        if coef.iter().chain(sigma_u_given_t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Malformed("non-finite confounder parameter".into()));
        }
        let means = treatment_means.unwrap_or_else(|| DVector::zeros(k));
        dim_check("treatment means", k, means.len())?;
        let sigma = symmetrize(&sigma_u_given_t);
        let (values, _) = sym_eigen_desc(&sigma);
        let min = values[m - 1];
        if min < S::of(-1e-8) {
            return Err(Error::NotPsd { min_eigenvalue: min.f64() });
        }
        let rank = psd_rank(&sigma);
        Ok(Self { coef, sigma_u_given_t: sigma, rank, treatment_means: means })
    }

    pub fn m(&self) -> usize {
        self.coef.nrows()
    }

    pub fn k(&self) -> usize {
        self.coef.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.m()
    }

    /// `μ_{u|t}` for a raw treatment vector.
    pub fn mean_given(&self, t: &DVector<S>) -> Result<DVector<S>> {
        dim_check("treatment vector", self.k(), t.len())?;
        Ok(&self.coef * (t - &self.treatment_means))
    }

    /// Conditional means for every row of a treatment matrix, as an n×m matrix.
    pub fn means_for_rows(&self, t: &TreatmentMatrix<S>) -> Result<DMatrix<S>> {
        dim_check("treatment columns", self.k(), t.ncols())?;
        let mut centered = t.data().clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.treatment_means[j]);
        }
        Ok(centered * self.coef.transpose())
    }

    /// The equivalent parameterization of the confounder `A U`:
    /// `(A coef, A Σ Aᵀ)`.
    pub fn reparameterize(&self, a: &DMatrix<S>) -> Result<Self> {
        dim_check("transform rows", self.m(), a.nrows())?;
        dim_check("transform columns", self.m(), a.ncols())?;
        Self::new(a * &self.coef, a * &self.sigma_u_given_t * a.transpose(), Some(self.treatment_means.clone()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ConfounderFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ConfounderFile = serde_json::from_str(text)?;
        file.into_confounder()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ConfounderFile {
    m: usize,
    k: usize,
    coef: Vec<f64>,
    sigma_u_given_t: Vec<f64>,
    treatment_means: Vec<f64>,
}

impl<S: Real> From<&ConditionalConfounder<S>> for ConfounderFile {
    fn from(cc: &ConditionalConfounder<S>) -> Self {
        Self {
            m: cc.m(),
            k: cc.k(),
            coef: row_major(&cc.coef),
            sigma_u_given_t: row_major(&cc.sigma_u_given_t),
            treatment_means: cc.treatment_means.iter().map(|v| v.f64()).collect(),
        }
    }
}

impl ConfounderFile {
    fn into_confounder<S: Real>(self) -> Result<ConditionalConfounder<S>> {
        let (m, k) = (self.m, self.k);
        if self.coef.len() != m * k {
            return Err(Error::Malformed(format!("coef has {} entries, expected {}", self.coef.len(), m * k)));
        }
        if self.sigma_u_given_t.len() != m * m {
            return Err(Error::Malformed(format!(
                "sigma_u_given_t has {} entries, expected {}",
                self.sigma_u_given_t.len(),
                m * m
            )));
        }
        if self.treatment_means.len() != k {
            return Err(Error::Malformed(format!(
                "treatment_means has {} entries, expected {k}",
                self.treatment_means.len()
            )));
        }
        let coef = DMatrix::from_row_slice(m, k, &self.coef).map(S::of);
        let sigma = DMatrix::from_row_slice(m, m, &self.sigma_u_given_t).map(S::of);
        let means = DVector::from_vec(self.treatment_means).map(S::of);
        ConditionalConfounder::new(coef, sigma, Some(means))
    }
}

pub(crate) fn row_major<S: Real>(a: &DMatrix<S>) -> Vec<f64> {
    a.row_iter().flat_map(|r| r.iter().map(|v| v.f64()).collect::<Vec<_>>()).collect()
}

/// Conditional confounder implied by a factor model with `Σ_u = I`.
///
/// Uses the m×m form `coef = (σ² I + BᵀB)^{-1} Bᵀ`, `Σ_{u|t} = I − coef B`,
/// so large k only costs matrix products.
pub fn conditional_confounder<S: Real>(fm: &FactorModel<S>) -> Result<ConditionalConfounder<S>> {
    let s2 = fm.sigma2_t_given_u;
    if s2 <= S::zero() || !s2.is_finite() {
        return Err(Error::InvalidModel(format!("noise variance must be positive, got {s2}")));
    }
    let m = fm.m;
    let b = &fm.b_hat;
    let inner = b.transpose() * b + DMatrix::identity(m, m) * s2;
    let chol = inner
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("σ²I + BᵀB is not positive definite".into()))?;
    let coef = chol.solve(&b.transpose());
    let sigma = symmetrize(&(DMatrix::identity(m, m) - &coef * b));
    let rank = psd_rank(&sigma);
    Ok(ConditionalConfounder { coef, sigma_u_given_t: sigma, rank, treatment_means: fm.treatment_means.clone() })
}

/// A pair of treatment levels to compare, `t1` against `t2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrast<S: Real> {
    t1: DVector<S>,
    t2: DVector<S>,
    delta: DVector<S>,
}

impl<S: Real> Contrast<S> {
    pub fn new(t1: DVector<S>, t2: DVector<S>) -> Result<Self> {
        dim_check("contrast levels", t1.len(), t2.len())?;
        let delta = &t1 - &t2;
        Ok(Self { t1, t2, delta })
    }

    /// `e_j` against the zero vector.
    pub fn unit(k: usize, j: usize) -> Result<Self> {
        if j >= k {
            return Err(Error::Dimension(format!("treatment index {j} out of range for k={k}")));
        }
        let mut t1 = DVector::zeros(k);
        t1[j] = S::one();
        Self::new(t1, DVector::zeros(k))
    }

    pub fn t1(&self) -> &DVector<S> {
        &self.t1
    }

    pub fn t2(&self) -> &DVector<S> {
        &self.t2
    }

    pub fn delta(&self) -> &DVector<S> {
        &self.delta
    }

    pub fn k(&self) -> usize {
        self.delta.len()
    }
}

/// `μ_{u|t1} − μ_{u|t2} = coef · Δt`.
pub fn mu_delta<S: Real>(cc: &ConditionalConfounder<S>, c: &Contrast<S>) -> Result<DVector<S>> {
    dim_check("contrast length", cc.k(), c.k())?;
    Ok(&cc.coef * c.delta())
}
