use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The factor model is not identified up to a causal equivalence class
    /// when the confounder dimension reaches the number of treatments.
    #[error("confounder dimension m={m} must satisfy 1 <= m < k={k}: the factor model is not identifiable otherwise")]
    NonIdentifiable { m: usize, k: usize },

    #[error("degenerate loading: eigenvalue {index} minus noise variance is {excess:e} (<= 0)")]
    DegenerateLoading { index: usize, excess: f64 },

    #[error("treatment covariance shows no factor structure: {0}")]
    NoStructure(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("singular fit: columns {columns:?} are linearly dependent on the others")]
    SingularFit { columns: Vec<usize> },

    #[error("perfect separation detected: probit coefficients diverged (max |coef| = {max_abs_coef:e})")]
    Separation { max_abs_coef: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("argument outside its domain: {0}")]
    Domain(String),

    #[error("covariance is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("invalid copula: {0}")]
    InvalidCopula(String),

    #[error("ratio denominator {denominator:e} is below 1e-12")]
    DegenerateRatio { denominator: f64 },

    #[error("direction must be a unit vector (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("no convergence after {iterations} iterations: {reason}")]
    NonConvergence {
        iterations: usize,
        reason: String,
        /// Last iterate, so callers can still inspect where the solver stopped.
        last: Vec<f64>,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of an iterative numerical procedure, as opposed to
    /// bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Separation { .. })
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::NonIdentifiable { .. } => "non_identifiable",
            Error::DegenerateLoading { .. } => "degenerate_loading",
            Error::NoStructure(_) => "no_structure",
            Error::InvalidModel(_) => "invalid_model",
            Error::SingularFit { .. } => "singular_fit",
            Error::Separation { .. } => "separation",
            Error::Precondition(_) => "precondition",
            Error::Domain(_) => "domain",
            Error::NotPsd { .. } => "not_psd",
            Error::InvalidCopula(_) => "invalid_copula",
            Error::DegenerateRatio { .. } => "degenerate_ratio",
            Error::NotUnit { .. } => "not_unit",
            Error::Positivity(_) => "positivity",
            Error::DegenerateDenominator(_) => "degenerate_denominator",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Malformed(_) => "malformed",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn dim_check(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}
