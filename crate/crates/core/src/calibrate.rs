//! Translation between the sensitivity vector and R² quantities, and observable
//! benchmark R² values.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::copula::SensitivitySpec;
use crate::error::{dim_check, Error, Result};
use crate::linalg::{ols, pinv_sqrt, psd_rank, sym_inv_sqrt};
use crate::model::TreatmentMatrix;
use crate::num::Real;
use crate::outcome::{fit_probit, BinaryOutcome};

/// `γ = √r2 · Σ^{-1/2} d` (pseudo-inverse root when `Σ` is singular).
pub fn gamma_from_r2_direction<S: Real>(r2: S, d: &DVector<S>, sigma_u_given_t: &DMatrix<S>) -> Result<SensitivitySpec<S>> {
    dim_check("direction", sigma_u_given_t.nrows(), d.len())?;
    if !(r2 >= S::zero() && r2 <= S::one()) {
        return Err(Error::Domain(format!("R² must lie in [0, 1], got {r2}")));
    }
    let norm = d.norm();
    if (norm - S::one()).abs() > S::of(1e-10) {
        return Err(Error::NotUnit { norm: norm.f64() });
    }
    let root = if psd_rank(sigma_u_given_t) == d.len() {
        sym_inv_sqrt(sigma_u_given_t)
    } else {
        pinv_sqrt(sigma_u_given_t)
    };
    SensitivitySpec::new(root * d * r2.sqrt(), sigma_u_given_t)
}

/// `γᵀ Σ γ`, the share of residual outcome variance explained by the confounder.
pub fn r2_of_gamma<S: Real>(gamma: &DVector<S>, sigma_u_given_t: &DMatrix<S>) -> Result<S> {
    dim_check("sensitivity vector", sigma_u_given_t.nrows(), gamma.len())?;
    let r2 = (sigma_u_given_t * gamma).dot(gamma);
    if r2 > S::one() + S::of(1e-9) {
        return Err(Error::Domain(format!("γᵀΣγ = {r2} exceeds 1")));
    }
    Ok(r2)
}

fn drop_columns<S: Real>(t: &TreatmentMatrix<S>, j: &[usize]) -> Result<DMatrix<S>> {
    let k = t.ncols();
    if let Some(&bad) = j.iter().find(|&&c| c >= k) {
        return Err(Error::Dimension(format!("column {bad} out of range for k={k}")));
    }
    let keep: Vec<usize> = (0..k).filter(|c| !j.contains(c)).collect();
    Ok(t.data().select_columns(&keep))
}

fn partial<S: Real>(full: S, restricted: S) -> Result<S> {
    let denom = S::one() - restricted;
    if denom <= S::of(1e-12) {
        return Err(Error::DegenerateDenominator(format!(
            "the remaining treatments already explain R² = {restricted} of the outcome"
        )));
    }
    let value = (full - restricted) / denom;
    if value < S::zero() {
        if value < S::of(-1e-6) {
            warn!("partial R² {value} is negative beyond rounding; clipped to 0");
        }
        return Ok(S::zero());
    }
    Ok(value)
}

fn r2_without<S: Real>(t: &TreatmentMatrix<S>, y: &DVector<S>, j: &[usize]) -> Result<S> {
    let rest = drop_columns(t, j)?;
    if rest.ncols() == 0 {
        return Ok(S::zero());
    }
    Ok(ols(&rest, y, true)?.r_squared())
}

/// Partial R² of the columns `j` for the outcome given the other treatments:
/// `(R²_{Y~T} − R²_{Y~T₋ⱼ}) / (1 − R²_{Y~T₋ⱼ})`.
pub fn partial_r2_treatment<S: Real>(t: &TreatmentMatrix<S>, y: &DVector<S>, j: &[usize]) -> Result<S> {
    dim_check("outcome length", t.nrows(), y.len())?;
    if j.is_empty() {
        return Err(Error::Precondition("partial R² needs at least one column".into()));
    }
    let full = ols(t.data(), y, true)?.r_squared();
    let restricted = r2_without(t, y, j)?;
    partial(full, restricted)
}

/// Variance-based R² of a probit model on its latent scale,
/// `Var(η)/(Var(η) + 1)` with `η` the fitted linear predictor.
fn latent_r2(data: &DMatrix<f64>, model: &BinaryOutcome<f64>) -> f64 {
    let n = data.nrows();
    let eta: Vec<f64> = (0..n).map(|i| data.row(i).transpose().dot(&model.probit_coef)).collect();
    let mean = eta.iter().sum::<f64>() / n as f64;
    let var = eta.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
    var / (var + 1.0)
}

/// Implicit R² of the treatments for a probit model. With an empty column set
/// this is the full-model value; otherwise the partial version for columns `j`
/// after refitting without them.
pub fn implicit_r2(t: &TreatmentMatrix<f64>, y: &DVector<f64>, model: &BinaryOutcome<f64>, j: &[usize]) -> Result<f64> {
    dim_check("outcome length", t.nrows(), y.len())?;
    dim_check("probit coefficients", t.ncols(), model.probit_coef.len())?;
    let full = latent_r2(t.data(), model);
    if j.is_empty() {
        return Ok(full);
    }
    let rest = drop_columns(t, j)?;
    let restricted = if rest.ncols() == 0 {
        0.0
    } else {
        let reduced = TreatmentMatrix::new(rest.clone(), None)?;
        latent_r2(&rest, &fit_probit(&reduced, y)?)
    };
    partial(full, restricted)
}
