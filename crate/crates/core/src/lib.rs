//! Sensitivity analysis for causal effects of many simultaneous treatments
//! under unobserved confounding.
//!
//! A latent-confounder factor model is fit to the treatments; the outcome law
//! given treatments is linked to the confounder through a copula whose
//! strength is the sensitivity parameter. From there the crate computes
//! intervention means, closed-form worst-case bias and ignorance regions,
//! robustness values, R² calibration, norm-minimizing candidate models over
//! many contrasts, risk-ratio analyses for binary outcomes, and a univariate
//! proxy-variable analysis.
//!
//! Linear algebra is generic over [`Real`] (`f32` or `f64`); type aliases for
//! both precisions live at the crate root.

pub mod binary;
pub mod bounds;
pub mod calibrate;
pub mod copula;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mcc;
pub mod model;
pub mod normal;
pub mod num;
pub mod outcome;
pub mod proxy;
pub mod simulate;

pub use binary::{binary_rv, rr_contrast, rr_curve, rr_ignorance_region, rr_single, signed_r2_grid, BinaryRv, RrRegion};
pub use bounds::{
    bias_closed_form, contrast_bound_sweep, ignorance_region, robustness_value, single_treatment_bias,
    worst_case_bias, worst_case_direction, Bias, BoundSweep, IgnoranceRegion, RobustnessValue, WorstDirection,
};
pub use calibrate::{gamma_from_r2_direction, implicit_r2, partial_r2_treatment, r2_of_gamma};
pub use copula::{
    degaussianize, gaussian_copula_density, gaussianize, intervention_mean_gaussian, intervention_mean_general,
    marginal_contrast, CopulaSpec, McEstimate, SensitivitySpec, TauFn,
};
pub use error::{Error, Result};
pub use mcc::{build_bank_unitwise, mcc_minimize, mcc_report, pate_vector, ContrastBank, MccOptions, MccSolution, Norm};
pub use model::{
    conditional_confounder, fit_ppca, fit_ppca_from_covariance, mu_delta, select_dim, ConditionalConfounder, Contrast,
    DimMethod, FactorModel, TreatmentMatrix,
};
pub use num::Real;
pub use outcome::{
    fit_empirical, fit_linear, fit_probit, BinaryOutcome, EmpiricalOutcome, GaussianOutcome, MeanRegressor,
    FittedOutcome, OutcomeModel, PolynomialRegressor,
};
pub use proxy::{fit_proxy, sigma_u2_domain, tau_adjusted, tau_bounds, ProxyDomain, ProxyFit};

pub type TreatmentMatrixF64 = TreatmentMatrix<f64>;
pub type TreatmentMatrixF32 = TreatmentMatrix<f32>;
pub type FactorModelF64 = FactorModel<f64>;
pub type FactorModelF32 = FactorModel<f32>;
pub type ConditionalConfounderF64 = ConditionalConfounder<f64>;
pub type ConditionalConfounderF32 = ConditionalConfounder<f32>;
pub type ContrastF64 = Contrast<f64>;
pub type ContrastF32 = Contrast<f32>;
pub type SensitivitySpecF64 = SensitivitySpec<f64>;
pub type SensitivitySpecF32 = SensitivitySpec<f32>;
pub type IgnoranceRegionF64 = IgnoranceRegion<f64>;
pub type IgnoranceRegionF32 = IgnoranceRegion<f32>;
pub type GaussianOutcomeF64 = GaussianOutcome<f64>;
pub type GaussianOutcomeF32 = GaussianOutcome<f32>;
pub type BinaryOutcomeF64 = BinaryOutcome<f64>;
pub type BinaryOutcomeF32 = BinaryOutcome<f32>;
pub type ContrastBankF64 = ContrastBank<f64>;
pub type ContrastBankF32 = ContrastBank<f32>;
pub type ProxyFitF64 = ProxyFit<f64>;
pub type ProxyFitF32 = ProxyFit<f32>;
