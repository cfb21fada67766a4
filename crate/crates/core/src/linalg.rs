//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::num::Real;

/// Eigenvalue floor applied before inverting a covariance square root.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Relative tolerance below which eigenvalues count as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
/// Columns of the returned matrix are the matching unit eigenvectors.
pub fn sym_eigen_desc<S: Real>(m: &DMatrix<S>) -> (DVector<S>, DMatrix<S>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `(A + Aᵀ)/2`.
pub fn symmetrize<S: Real>(a: &DMatrix<S>) -> DMatrix<S> {
    (a + a.transpose()) * S::of(0.5)
}

fn spectral_map<S: Real>(values: &DVector<S>, vectors: &DMatrix<S>, f: impl Fn(S) -> S) -> DMatrix<S> {
    let scaled = DVector::from_iterator(values.len(), values.iter().map(|&v| f(v)));
    let mut left = vectors.clone();
    for (j, mut col) in left.column_iter_mut().enumerate() {
        col *= scaled[j];
    }
    left * vectors.transpose()
}

/// Symmetric square root of a PSD matrix; negative rounding noise is zeroed.
pub fn sym_sqrt<S: Real>(a: &DMatrix<S>) -> DMatrix<S> {
    let (values, vectors) = sym_eigen_desc(a);
    spectral_map(&values, &vectors, |v| v.max(S::zero()).sqrt())
}

/// `A^{-1/2}` with eigenvalues floored at [`EIGEN_FLOOR`].
pub fn sym_inv_sqrt<S: Real>(a: &DMatrix<S>) -> DMatrix<S> {
    let (values, vectors) = sym_eigen_desc(a);
    let floor = S::of(EIGEN_FLOOR);
    spectral_map(&values, &vectors, |v| S::one() / v.max(floor).sqrt())
}

/// `(A^†)^{1/2}`: eigenvalues below `RANK_RTOL * λ_max` are dropped.
pub fn pinv_sqrt<S: Real>(a: &DMatrix<S>) -> DMatrix<S> {
    let (values, vectors) = sym_eigen_desc(a);
    let cutoff = rank_cutoff(&values);
    spectral_map(&values, &vectors, |v| if v > cutoff { S::one() / v.sqrt() } else { S::zero() })
}

pub(crate) fn rank_cutoff<S: Real>(values: &DVector<S>) -> S {
    let top = values.iter().fold(S::zero(), |acc, &v| acc.max(v));
    S::of(RANK_RTOL) * top
}

/// Numerical rank of a PSD matrix at relative tolerance [`RANK_RTOL`].
pub fn psd_rank<S: Real>(a: &DMatrix<S>) -> usize {
    let (values, _) = sym_eigen_desc(a);
    let cutoff = rank_cutoff(&values);
    values.iter().filter(|&&v| v > cutoff).count()
}

/// Least-squares fit with optional intercept.
#[derive(Debug, Clone)]
pub struct OlsFit<S: Real> {
    /// Intercept first when requested, then one entry per column of `x`.
    pub coef: DVector<S>,
    pub rss: S,
    pub tss: S,
    /// `(XᵀX)^{-1}` of the design including the intercept column.
    pub xtx_inv: DMatrix<S>,
    pub n: usize,
    pub p: usize,
}

impl<S: Real> OlsFit<S> {
    pub fn r_squared(&self) -> S {
        if self.tss <= S::zero() {
            return S::zero();
        }
        S::one() - self.rss / self.tss
    }

    /// Unbiased residual variance `RSS/(n-p)`.
    pub fn sigma2(&self) -> S {
        self.rss / S::of_usize(self.n - self.p)
    }

    pub fn std_errors(&self) -> DVector<S> {
        let s2 = self.sigma2();
        DVector::from_iterator(self.p, (0..self.p).map(|i| (self.xtx_inv[(i, i)] * s2).max(S::zero()).sqrt()))
    }
}

/// Ordinary least squares through a reorthogonalized Gram–Schmidt QR.
///
/// Columns whose residual after projecting out the earlier ones falls below
/// `1e-10` of their norm are reported as [`Error::SingularFit`], indexed in
/// `x` (the intercept, if any, is not counted).
pub fn ols<S: Real>(x: &DMatrix<S>, y: &DVector<S>, intercept: bool) -> Result<OlsFit<S>> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::Dimension(format!("design has {n} rows, response has {}", y.len())));
    }
    let offset = usize::from(intercept);
    let p = x.ncols() + offset;
    if n < p {
        return Err(Error::Precondition(format!("{n} observations cannot fit {p} coefficients")));
    }
    let column = |j: usize| -> DVector<S> {
        if intercept && j == 0 {
            DVector::from_element(n, S::one())
        } else {
            x.column(j - offset).into_owned()
        }
    };

    let mut q = DMatrix::<S>::zeros(n, p);
    let mut r = DMatrix::<S>::zeros(p, p);
    let mut dependent = Vec::new();
    let tol = S::of(1e-10);
    for j in 0..p {
        let original = column(j);
        let norm0 = original.norm();
        let mut v = original;
        for _pass in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dot(&v);
                r[(i, j)] += proj;
                v.axpy(-proj, &q.column(i), S::one());
            }
        }
        let norm = v.norm();
        if norm0 == S::zero() || norm <= tol * norm0 {
            if !(intercept && j == 0) {
                dependent.push(j - offset);
            } else {
                dependent.push(usize::MAX);
            }
            continue;
        }
        r[(j, j)] = norm;
        q.set_column(j, &(v / norm));
    }
    if !dependent.is_empty() {
        dependent.retain(|&c| c != usize::MAX);
        return Err(Error::SingularFit { columns: dependent });
    }

    let qty = q.transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularFit { columns: vec![] })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::SingularFit { columns: vec![] })?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let mut fitted = DVector::zeros(n);
    for j in 0..p {
        fitted.axpy(coef[j], &column(j), S::one());
    }
    let rss = (y - fitted).norm_squared();
    let tss = if intercept {
        let mean = y.mean();
        y.iter().map(|&v| (v - mean) * (v - mean)).fold(S::zero(), |a, b| a + b)
    } else {
        y.norm_squared()
    };
    Ok(OlsFit { coef, rss, tss, xtx_inv, n, p })
}

/// Column means of a matrix.
pub fn column_means<S: Real>(x: &DMatrix<S>) -> DVector<S> {
    let n = S::of_usize(x.nrows());
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Maximum-likelihood (divide by n) covariance of the columns.
pub fn covariance_ml<S: Real>(x: &DMatrix<S>) -> (DVector<S>, DMatrix<S>) {
    let means = column_means(x);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let cov = centered.transpose() * &centered / S::of_usize(x.nrows());
    (means, symmetrize(&cov))
}
