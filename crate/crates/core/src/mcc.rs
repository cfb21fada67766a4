//! Multiple-contrast criteria: the sensitivity vector that makes the vector of
//! implied effects smallest in an Lp norm, subject to an R² cap.
//!
//! In whitened coordinates `z = Σ^{1/2} γ` the cap is the ball `‖z‖² ≤ R²` and
//! the effects are affine, `naive − A z` with `A = σ D Σ^{-1/2}`. L2 is a
//! trust-region problem solved by bisection on the multiplier. L1 and L∞ run
//! projected subgradient descent and then an ellipsoid method whose
//! lower bound certifies the final gap.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{pinv_sqrt, psd_rank, sym_eigen_desc, sym_inv_sqrt, sym_sqrt};
use crate::model::{ConditionalConfounder, TreatmentMatrix};
use crate::num::Real;
use crate::outcome::GaussianOutcome;

/// Confounder shifts and naive effects for a family of contrasts.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBank<S: Real> {
    /// Row `k` is `μ_{u|Δt_k}ᵀ`.
    pub deltas: DMatrix<S>,
    pub naive: DVector<S>,
    pub sigma_y_given_t: S,
    /// Covariance the R² cap is measured in.
    pub sigma_u_given_t: DMatrix<S>,
    pub ids: Vec<String>,
}

impl<S: Real> ContrastBank<S> {
    pub fn new(deltas: DMatrix<S>, naive: DVector<S>, sigma_y_given_t: S, sigma_u_given_t: DMatrix<S>, ids: Option<Vec<String>>) -> Result<Self> {
        let (kk, m) = deltas.shape();
        if kk == 0 {
            return Err(Error::Precondition("a contrast bank needs at least one contrast".into()));
        }
        dim_check("naive effects", kk, naive.len())?;
        if sigma_u_given_t.shape() != (m, m) {
            return Err(Error::Dimension(format!("confounder covariance must be {m}x{m}")));
        }
        let ids = ids.unwrap_or_else(|| (0..kk).map(|i| format!("c{i}")).collect());
        dim_check("contrast ids", kk, ids.len())?;
        Ok(Self { deltas, naive, sigma_y_given_t, sigma_u_given_t, ids })
    }

    pub fn len(&self) -> usize {
        self.naive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.naive.is_empty()
    }

    pub fn m(&self) -> usize {
        self.deltas.ncols()
    }
}

/// Bank of unit contrasts, one per treatment index: averaging the effect of
/// raising `t_j` by one over the observed rows leaves `Δt = e_j`, so row `j` is
/// column `j` of the confounder map and the naive effect is the regression
/// coefficient.
pub fn build_bank_unitwise<S: Real>(
    cc: &ConditionalConfounder<S>,
    observed: &TreatmentMatrix<S>,
    outcome: &GaussianOutcome<S>,
    treatment_indices: &[usize],
) -> Result<ContrastBank<S>> {
    let k = cc.k();
    dim_check("observed treatment columns", k, observed.ncols())?;
    dim_check("outcome coefficients", k, outcome.tau_naive.len())?;
    if let Some(&bad) = treatment_indices.iter().find(|&&j| j >= k) {
        return Err(Error::Dimension(format!("treatment index {bad} out of range for k={k}")));
    }
    let deltas = DMatrix::from_fn(treatment_indices.len(), cc.m(), |r, c| cc.coef[(c, treatment_indices[r])]);
    let naive = DVector::from_iterator(treatment_indices.len(), treatment_indices.iter().map(|&j| outcome.tau_naive[j]));
    let ids = treatment_indices
        .iter()
        .map(|&j| observed.column_names().map_or_else(|| format!("t{j}"), |n| n[j].clone()))
        .collect();
    ContrastBank::new(deltas, naive, outcome.sigma_y(), cc.sigma_u_given_t.clone(), Some(ids))
}

/// Implied effects `naive − σ D γ`.
pub fn pate_vector<S: Real>(bank: &ContrastBank<S>, gamma: &DVector<S>) -> Result<DVector<S>> {
    dim_check("sensitivity vector", bank.m(), gamma.len())?;
    Ok(&bank.naive - &bank.deltas * gamma * bank.sigma_y_given_t)
}

/// Norm aggregating the effect vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn eval(self, r: &DVector<f64>) -> f64 {
        match self {
            Norm::L1 => r.iter().map(|v| v.abs()).sum(),
            Norm::L2 => r.norm(),
            Norm::Linf => r.iter().fold(0.0, |a, v| a.max(v.abs())),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "linf" | "l-inf" | "max" => Ok(Norm::Linf),
            other => Err(Error::Domain(format!("unknown norm {other:?}; expected l1, l2 or linf"))),
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MccOptions {
    /// L2: tolerance on the cap and KKT residuals. L1/L∞: objective
    /// stabilization over 100 iterations and the certified optimality gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Seeds the random feasible starting point of the subgradient phase.
    pub seed: u64,
}

impl MccOptions {
    pub fn defaults_for(norm: Norm) -> Self {
        match norm {
            Norm::L2 => Self { tol: 1e-8, max_iter: 50_000, seed: 0 },
            Norm::L1 | Norm::Linf => Self { tol: 1e-5, max_iter: 50_000, seed: 0 },
        }
    }
}

/// Minimizer found by [`mcc_minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct MccSolution<S: Real> {
    pub gamma_star: DVector<S>,
    pub achieved_norm: S,
    pub achieved_r2: S,
    pub naive_norm: S,
    /// Multiplier `λ` of `(DᵀD + λΣ)γ = Dᵀnaive/σ` (L2 only).
    pub lambda: Option<S>,
    /// Upper minus certified lower bound on the objective (L1/L∞ only).
    pub gap: Option<S>,
    pub iterations: usize,
}

struct Whitened {
    a: DMatrix<f64>,
    naive: DVector<f64>,
    /// Maps whitened `z` back to `γ`.
    unwhiten: DMatrix<f64>,
    radius: f64,
}

fn whiten_bank<S: Real>(bank: &ContrastBank<S>, r2_cap: f64) -> Whitened {
    let sigma = bank.sigma_u_given_t.map(|v| v.f64());
    let unwhiten = if psd_rank(&sigma) == sigma.nrows() { sym_inv_sqrt(&sigma) } else { pinv_sqrt(&sigma) };
    let d = bank.deltas.map(|v| v.f64());
    let a = &d * &unwhiten * bank.sigma_y_given_t.f64();
    Whitened { a, naive: bank.naive.map(|v| v.f64()), unwhiten, radius: r2_cap.sqrt() }
}

/// Sensitivity vector minimizing `‖naive − σDγ‖_p` subject to `γᵀΣγ ≤ r2_cap`.
pub fn mcc_minimize<S: Real>(bank: &ContrastBank<S>, norm: Norm, r2_cap: f64, opts: &MccOptions) -> Result<MccSolution<S>> {
    if !(0.0..=1.0).contains(&r2_cap) {
        return Err(Error::Domain(format!("R² cap must lie in [0, 1], got {r2_cap}")));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Domain("tolerance must be positive and max_iter at least 1".into()));
    }
    let w = whiten_bank(bank, r2_cap);
    let naive_norm = norm.eval(&w.naive);
    let (z, lambda, gap, iterations) = if r2_cap == 0.0 {
        (DVector::zeros(bank.m()), Some(0.0), Some(0.0), 0)
    } else {
        match norm {
            Norm::L2 => {
                let (z, lam) = trust_region(&w.a, &w.naive, w.radius);
                let s2 = bank.sigma_y_given_t.f64().powi(2);
                (z, Some(lam / s2), None, 0)
            }
            Norm::L1 | Norm::Linf => {
                let (z, gap, it) = nonsmooth(&w, norm, opts)?;
                (z, None, Some(gap), it)
            }
        }
    };
    let gamma = &w.unwhiten * &z;
    let sigma = bank.sigma_u_given_t.map(|v| v.f64());
    let achieved_r2 = (&sigma * &gamma).dot(&gamma);
    let residual = &w.naive - &w.a * &z;
    Ok(MccSolution {
        gamma_star: gamma.map(S::of),
        achieved_norm: S::of(norm.eval(&residual)),
        achieved_r2: S::of(achieved_r2),
        naive_norm: S::of(naive_norm),
        lambda: lambda.map(S::of),
        gap: gap.map(S::of),
        iterations,
    })
}

/// `min ‖b − A z‖₂ s.t. ‖z‖ ≤ radius`; returns `z` and the multiplier of
/// `(AᵀA + λI) z = Aᵀb`.
fn trust_region(a: &DMatrix<f64>, b: &DVector<f64>, radius: f64) -> (DVector<f64>, f64) {
    let (vals, vecs) = sym_eigen_desc(&(a.transpose() * a));
    let rhs = vecs.transpose() * (a.transpose() * b);
    let top = vals[0].max(0.0);
    let solve = |lam: f64| -> DVector<f64> {
        let coords = DVector::from_fn(vals.len(), |i, _| {
            let d = vals[i].max(0.0) + lam;
            if d > 1e-14 * top.max(1e-300) { rhs[i] / d } else { 0.0 }
        });
        &vecs * coords
    };
    let r2 = radius * radius;
    let free = solve(0.0);
    if free.norm_squared() <= r2 {
        return (free, 0.0);
    }
    let mut lo = 0.0;
    let mut hi = top.max(1e-12);
    while solve(hi).norm_squared() > r2 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        if solve(mid).norm_squared() > r2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (solve(hi), hi)
}

fn subgradient(w: &Whitened, norm: Norm, z: &DVector<f64>) -> (f64, DVector<f64>) {
    let r = &w.naive - &w.a * z;
    let f = norm.eval(&r);
    let s = match norm {
        Norm::L1 => r.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
        Norm::Linf => {
            let mut s = DVector::zeros(r.len());
            let mut best = 0;
            for i in 1..r.len() {
                if r[i].abs() > r[best].abs() {
                    best = i;
                }
            }
            if r[best] != 0.0 {
                s[best] = r[best].signum();
            }
            s
        }
        Norm::L2 => unreachable!("L2 is solved in closed form"),
    };
    (f, -(w.a.transpose() * s))
}

fn project(z: &mut DVector<f64>, radius: f64) {
    let n = z.norm();
    if n > radius {
        *z *= radius / n;
    }
}

const STABILIZE_WINDOW: usize = 100;

fn nonsmooth(w: &Whitened, norm: Norm, opts: &MccOptions) -> Result<(DVector<f64>, f64, usize)> {
    let m = w.a.ncols();
    let radius = w.radius;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut z = if dir.norm() > 0.0 { dir.normalize() * (radius * rng.random::<f64>().sqrt()) } else { DVector::zeros(m) };

    // projected subgradient with averaged iterates
    let mut avg = z.clone();
    let (mut best_f, _) = subgradient(w, norm, &z);
    let mut best_z = z.clone();
    let mut window_start = best_f;
    let mut iterations = 0;
    let mut stabilized = false;
    for t in 1..=opts.max_iter {
        iterations = t;
        let (f, g) = subgradient(w, norm, &z);
        if f < best_f {
            best_f = f;
            best_z = z.clone();
        }
        let gn = g.norm();
        if gn == 0.0 {
            stabilized = true;
            break;
        }
        z -= g * (radius / (t as f64).sqrt() / gn);
        project(&mut z, radius);
        avg += (&z - &avg) / (t as f64 + 1.0);
        if t % STABILIZE_WINDOW == 0 {
            let (fa, _) = subgradient(w, norm, &avg);
            if fa < best_f {
                best_f = fa;
                best_z = avg.clone();
            }
            if window_start - best_f < opts.tol {
                stabilized = true;
                break;
            }
            window_start = best_f;
        }
    }

    // refinement with a certified lower bound
    let mut candidates = vec![best_z];
    let (l2, _) = trust_region(&w.a, &w.naive, radius);
    candidates.push(l2);
    candidates.push(DVector::zeros(m));
    let (ref_z, lower, ref_it) = if m == 1 { golden(w, norm, radius) } else { ellipsoid(w, norm, radius, opts.tol, opts.max_iter) };
    candidates.push(ref_z);
    iterations += ref_it;
    let (z, f) = candidates
        .into_iter()
        .map(|c| {
            let f = subgradient(w, norm, &c).0;
            (c, f)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("candidate list is never empty");
    let gap = (f - lower).max(0.0);
    if gap > opts.tol && !stabilized {
        return Err(Error::NonConvergence {
            iterations,
            reason: format!("{norm:?} objective gap {gap:e} above tolerance {:e}", opts.tol),
            last: z.iter().copied().collect(),
        });
    }
    Ok((z, gap, iterations))
}

/// Scalar case: golden-section search on the segment `[−radius, radius]`.
/// Returns the minimizer and a lower bound from the final bracket.
fn golden(w: &Whitened, norm: Norm, radius: f64) -> (DVector<f64>, f64, usize) {
    let f = |x: f64| subgradient(w, norm, &DVector::from_element(1, x)).0;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-radius, radius);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut it = 0;
    while b - a > 1e-14 * radius.max(1e-300) && it < 400 {
        it += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    // Lipschitz bound over the final bracket
    let lip = w.a.column(0).iter().map(|v| v.abs()).sum::<f64>();
    (DVector::from_element(1, x), fx - lip * (b - a), it)
}

/// Central-cut ellipsoid method over the ball.
fn ellipsoid(w: &Whitened, norm: Norm, radius: f64, tol: f64, max_iter: usize) -> (DVector<f64>, f64, usize) {
    let m = w.a.ncols() as f64;
    let mut x = DVector::zeros(w.a.ncols());
    let mut p = DMatrix::identity(w.a.ncols(), w.a.ncols()) * (radius * radius);
    let mut best = (x.clone(), f64::INFINITY);
    let mut lower = f64::NEG_INFINITY;
    let target = tol * 1e-3;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let xn = x.norm();
        let g = if xn > radius {
            x.clone()
        } else {
            let (f, g) = subgradient(w, norm, &x);
            if f < best.1 {
                best = (x.clone(), f);
            }
            let width = (g.dot(&(&p * &g))).max(0.0).sqrt();
            lower = lower.max(f - width);
            if g.norm() == 0.0 {
                lower = f;
                break;
            }
            g
        };
        if best.1 - lower <= target {
            break;
        }
        let pg = &p * &g;
        let denom = g.dot(&pg);
        if !(denom > 0.0) {
            break;
        }
        let gt = &pg / denom.sqrt();
        x -= &gt / (m + 1.0);
        p = (&p - &gt * gt.transpose() * (2.0 / (m + 1.0))) * (m * m / (m * m - 1.0));
        p = (&p + p.transpose()) * 0.5;
    }
    let (bx, _) = best;
    (bx, lower, it)
}

/// One row of the adjusted-effect table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub contrast_id: String,
    pub naive: f64,
    pub adjusted: f64,
    /// `adjusted / naive`; absent when the naive effect is zero.
    pub shrinkage_ratio: Option<f64>,
}

/// Naive and adjusted effects side by side.
pub fn mcc_report<S: Real>(bank: &ContrastBank<S>, gamma_star: &DVector<S>) -> Result<Vec<ReportRow>> {
    let adjusted = pate_vector(bank, gamma_star)?;
    Ok((0..bank.len())
        .map(|i| {
            let (n, a) = (bank.naive[i].f64(), adjusted[i].f64());
            ReportRow { contrast_id: bank.ids[i].clone(), naive: n, adjusted: a, shrinkage_ratio: (n != 0.0).then(|| a / n) }
        })
        .collect())
}

/// `Σ^{1/2}`-whitened view used by tests and the CLI summary.
pub fn whitened_gamma<S: Real>(bank: &ContrastBank<S>, gamma: &DVector<S>) -> DVector<f64> {
    sym_sqrt(&bank.sigma_u_given_t.map(|v| v.f64())) * gamma.map(|v| v.f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::robustness_value;
    use crate::model::{conditional_confounder, mu_delta, Contrast, FactorModel};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn random_bank(seed: u64, kk: usize, m: usize) -> ContrastBank<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma = &g * g.transpose() / m as f64 + DMatrix::identity(m, m) * 0.1;
        let deltas = DMatrix::from_fn(kk, m, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
        let naive = DVector::from_fn(kk, |_, _| rng.sample::<f64, _>(StandardNormal));
        ContrastBank::new(deltas, naive, 1.3, sigma, None).unwrap()
    }

    fn kkt(bank: &ContrastBank<f64>, sol: &MccSolution<f64>, cap: f64) -> (f64, f64, f64) {
        let d = &bank.deltas;
        let s = bank.sigma_y_given_t;
        let lam = sol.lambda.unwrap();
        let lhs = (d.transpose() * d + &bank.sigma_u_given_t * lam) * &sol.gamma_star;
        let rhs = d.transpose() * &bank.naive / s;
        ((lhs - &rhs).norm() / rhs.norm(), lam, (lam * (sol.achieved_r2 - cap)).abs())
    }

    #[test]
    fn zero_cap_leaves_naive_effects() {
        let bank = random_bank(1, 6, 2);
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            let sol = mcc_minimize(&bank, norm, 0.0, &MccOptions::defaults_for(norm)).unwrap();
            assert_eq!(sol.gamma_star, DVector::zeros(2));
            assert_eq!(sol.achieved_norm, norm.eval(&bank.naive));
        }
    }

    #[test]
    fn zero_map_bank_cannot_move_effects() {
        let cc = ConditionalConfounder::new(DMatrix::zeros(2, 4), DMatrix::identity(2, 2), None).unwrap();
        let obs = TreatmentMatrix::new(DMatrix::from_fn(5, 4, |i, j| (i + j) as f64), None).unwrap();
        let outcome = GaussianOutcome { tau_naive: dvector![1.0, -1.0, 0.5, 0.0], intercept: 0.0, sigma2_y_given_t: 1.0, tau_se: DVector::zeros(4), intercept_se: 0.0, n: 5 };
        let bank = build_bank_unitwise(&cc, &obs, &outcome, &[0, 1, 2, 3]).unwrap();
        assert_eq!(bank.deltas, DMatrix::zeros(4, 2));
        let sol = mcc_minimize(&bank, Norm::L1, 1.0, &MccOptions::defaults_for(Norm::L1)).unwrap();
        assert_relative_eq!(sol.achieved_norm, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn unitwise_rows_match_mu_delta() {
        let b = dmatrix![1.0, 0.2; 0.5, -1.0; -0.4, 0.3; 0.2, 0.8];
        let cc = conditional_confounder(&FactorModel::from_parts(b, 1.0, None).unwrap()).unwrap();
        let obs = TreatmentMatrix::new(DMatrix::from_fn(5, 4, |i, j| (i * j) as f64), None).unwrap();
        let outcome = GaussianOutcome { tau_naive: dvector![1.0, 2.0, 3.0, 4.0], intercept: 0.0, sigma2_y_given_t: 1.0, tau_se: DVector::zeros(4), intercept_se: 0.0, n: 5 };
        let bank = build_bank_unitwise(&cc, &obs, &outcome, &[2]).unwrap();
        let mu = mu_delta(&cc, &Contrast::unit(4, 2).unwrap()).unwrap();
        assert_eq!(bank.deltas.row(0).transpose(), mu);
        assert_eq!(bank.naive[0], 3.0);
    }

    #[test]
    fn single_contrast_is_explained_away_at_its_rv() {
        let cc = ConditionalConfounder::new(dmatrix![0.4], dmatrix![0.2], None).unwrap();
        let c = Contrast::new(dvector![1.0], dvector![0.0]).unwrap();
        let naive = 0.5;
        let rv = robustness_value(naive, &cc, 1.0, &c).unwrap().rv;
        let bank = ContrastBank::new(dmatrix![0.4], dvector![naive], 1.0, dmatrix![0.2], None).unwrap();
        let sol = mcc_minimize(&bank, Norm::L2, rv, &MccOptions::defaults_for(Norm::L2)).unwrap();
        assert!(sol.achieved_norm < 1e-8, "{sol:?}");
        let over = mcc_minimize(&bank, Norm::L2, (rv + 0.1).min(1.0), &MccOptions::defaults_for(Norm::L2)).unwrap();
        assert!(over.achieved_norm < 1e-12);
        assert_eq!(over.lambda, Some(0.0));
    }

    #[test]
    fn pate_vector_is_linear() {
        let bank = random_bank(2, 5, 3);
        let (g1, g2) = (dvector![0.1, -0.2, 0.3], dvector![-0.4, 0.05, 0.2]);
        let zero = pate_vector(&bank, &DVector::zeros(3)).unwrap();
        assert_eq!(zero, bank.naive);
        let sum = pate_vector(&bank, &(&g1 + &g2)).unwrap();
        let sep = pate_vector(&bank, &g1).unwrap() + pate_vector(&bank, &g2).unwrap() - &bank.naive;
        assert!((sum - sep).norm() < 1e-12);
    }

    #[test]
    fn report_matches_pate_vector() {
        let bank = random_bank(3, 4, 2);
        let g = dvector![0.2, -0.1];
        let rows = mcc_report(&bank, &g).unwrap();
        let pv = pate_vector(&bank, &g).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.adjusted, pv[i]);
            assert_eq!(r.naive, bank.naive[i]);
        }
    }

    #[test]
    fn l1_beats_or_ties_l2_solution() {
        let bank = random_bank(4, 30, 3);
        let l2 = mcc_minimize(&bank, Norm::L2, 0.5, &MccOptions::defaults_for(Norm::L2)).unwrap();
        let l1 = mcc_minimize(&bank, Norm::L1, 0.5, &MccOptions::defaults_for(Norm::L1)).unwrap();
        let l2_as_l1 = Norm::L1.eval(&pate_vector(&bank, &l2.gamma_star).unwrap());
        assert!(l1.achieved_norm <= l2_as_l1 + 1e-5);
        assert!(l1.achieved_r2 <= 0.5 + 1e-8);
        assert!(l1.gap.unwrap() < 1e-5);
    }

    #[test]
    fn rank_deficient_covariance_restricts_gamma_to_its_range() {
        let sigma = dmatrix![1.0, 0.0; 0.0, 0.0];
        let bank = ContrastBank::new(dmatrix![1.0, 5.0; 0.5, -3.0], dvector![1.0, 1.0], 1.0, sigma, None).unwrap();
        let sol = mcc_minimize(&bank, Norm::L2, 0.3, &MccOptions::defaults_for(Norm::L2)).unwrap();
        assert_eq!(sol.gamma_star[1], 0.0);
        assert!(sol.achieved_r2 <= 0.3 + 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn l2_solution_satisfies_kkt(seed in any::<u64>(), kk in 1usize..12, m in 1usize..4, cap in 0.01f64..1.0) {
            let bank = random_bank(seed, kk, m);
            let sol = mcc_minimize(&bank, Norm::L2, cap, &MccOptions::defaults_for(Norm::L2)).unwrap();
            let (res, lam, slack) = kkt(&bank, &sol, cap);
            prop_assert!(lam >= 0.0);
            prop_assert!(res < 1e-8, "KKT residual {}", res);
            prop_assert!(slack < 1e-8, "slackness {}", slack);
            prop_assert!(sol.achieved_r2 <= cap + 1e-8);
        }

        #[test]
        fn objective_nonincreasing_in_cap(seed in any::<u64>(), which in 0usize..3) {
            let norm = [Norm::L1, Norm::L2, Norm::Linf][which];
            let bank = random_bank(seed, 8, 2);
            let mut last = f64::INFINITY;
            for cap in [0.0, 0.1, 0.3, 0.6, 1.0] {
                let sol = mcc_minimize(&bank, norm, cap, &MccOptions::defaults_for(norm)).unwrap();
                prop_assert!(sol.achieved_norm <= last + 1e-5);
                prop_assert!(sol.achieved_r2 <= cap + 1e-8);
                last = sol.achieved_norm;
            }
        }

        #[test]
        fn restarts_agree(seed in any::<u64>(), which in 0usize..2) {
            let norm = [Norm::L1, Norm::Linf][which];
            let bank = random_bank(seed, 15, 3);
            let values: Vec<f64> = (0..10)
                .map(|s| mcc_minimize(&bank, norm, 0.7, &MccOptions { seed: s, ..MccOptions::defaults_for(norm) }).unwrap().achieved_norm)
                .collect();
            let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(values.iter().all(|v| v - best <= 2e-5));
        }
    }
}
