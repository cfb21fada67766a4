//! Risk ratios for binary outcomes under the Gaussian copula on the probit
//! scale.
//!
//! With `P(Y=1 | t) = Φ(η_t)`, the intervention probability is the mixture
//! over observed rows of `Φ(η_t + γᵀ(μ_{u|tᵢ} − μ_{u|t}))`. The risk ratio is
//! not monotone in the confounding strength, so regions are found by search.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::IgnoranceRegion;
use crate::calibrate::gamma_from_r2_direction;
use crate::copula::SensitivitySpec;
use crate::error::{dim_check, Error, Result};
use crate::linalg::{pinv_sqrt, psd_rank, sym_inv_sqrt};
use crate::model::{ConditionalConfounder, Contrast, TreatmentMatrix};
use crate::normal;
use crate::outcome::BinaryOutcome;

const RESTARTS: usize = 200;
const REFINE_TOL: f64 = 1e-6;
const SCAN_POINTS: usize = 201;

struct Setup {
    /// `μ_{u|tᵢ}` without the centering, one row per observed `tᵢ`.
    row_means: DMatrix<f64>,
}

impl Setup {
    fn new(cc: &ConditionalConfounder<f64>, bin: &BinaryOutcome<f64>, observed: &TreatmentMatrix<f64>) -> Result<Self> {
        dim_check("observed treatment columns", cc.k(), observed.ncols())?;
        dim_check("probit coefficients", cc.k(), bin.probit_coef.len())?;
        if observed.nrows() == 0 {
            return Err(Error::Precondition("at least one observed treatment row is required".into()));
        }
        Ok(Self { row_means: observed.data() * cc.coef.transpose() })
    }

    /// `Σᵢ Φ(Φ⁻¹(μ_{y|t}) + γᵀ(μ_{u|tᵢ} − μ_{u|t})) / n`.
    fn numerator(&self, cc: &ConditionalConfounder<f64>, bin: &BinaryOutcome<f64>, t: &DVector<f64>, gamma: &DVector<f64>) -> Result<f64> {
        dim_check("treatment vector", cc.k(), t.len())?;
        let (mu, clamped) = normal::clamp_unit(bin.mu_y(t)?);
        if clamped {
            warn!("P(Y=1 | t) = {mu} was clamped away from 0/1");
        }
        let eta = normal::quantile(mu);
        let at = (&cc.coef * t).dot(gamma);
        let shifts = &self.row_means * gamma;
        Ok(shifts.iter().map(|s| normal::cdf(eta + s - at)).sum::<f64>() / shifts.len() as f64)
    }
}

fn check_spec(cc: &ConditionalConfounder<f64>, spec: &SensitivitySpec<f64>) -> Result<()> {
    dim_check("sensitivity vector", cc.m(), spec.m())
}

fn marginal(bin: &BinaryOutcome<f64>) -> Result<f64> {
    if !(bin.p_y1 > 0.0 && bin.p_y1 < 1.0) {
        return Err(Error::Domain(format!("P(Y=1) must lie in (0, 1), got {}", bin.p_y1)));
    }
    Ok(bin.p_y1)
}

/// `RR_t = P(Y=1 | do(t)) / P(Y=1)`.
pub fn rr_single(
    t: &DVector<f64>,
    spec: &SensitivitySpec<f64>,
    cc: &ConditionalConfounder<f64>,
    bin: &BinaryOutcome<f64>,
    observed: &TreatmentMatrix<f64>,
) -> Result<f64> {
    check_spec(cc, spec)?;
    let p = marginal(bin)?;
    Ok(Setup::new(cc, bin, observed)?.numerator(cc, bin, t, &spec.gamma)? / p)
}

/// `RR_{t1,t2} = P(Y=1 | do(t1)) / P(Y=1 | do(t2))`.
pub fn rr_contrast(
    c: &Contrast<f64>,
    spec: &SensitivitySpec<f64>,
    cc: &ConditionalConfounder<f64>,
    bin: &BinaryOutcome<f64>,
    observed: &TreatmentMatrix<f64>,
) -> Result<f64> {
    check_spec(cc, spec)?;
    let setup = Setup::new(cc, bin, observed)?;
    rr_with(&setup, c, cc, bin, &spec.gamma)
}

fn rr_with(setup: &Setup, c: &Contrast<f64>, cc: &ConditionalConfounder<f64>, bin: &BinaryOutcome<f64>, gamma: &DVector<f64>) -> Result<f64> {
    let den = setup.numerator(cc, bin, c.t2(), gamma)?;
    if den < 1e-300 {
        return Err(Error::DegenerateRatio { denominator: den });
    }
    Ok(setup.numerator(cc, bin, c.t1(), gamma)? / den)
}

/// Risk ratio along `γ = sign(r²)·√|r²|·Σ^{-1/2} d` for each signed `r²`.
pub fn rr_curve(
    c: &Contrast<f64>,
    cc: &ConditionalConfounder<f64>,
    bin: &BinaryOutcome<f64>,
    observed: &TreatmentMatrix<f64>,
    direction: &DVector<f64>,
    signed_r2_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let setup = Setup::new(cc, bin, observed)?;
    signed_r2_grid
        .iter()
        .map(|&s| {
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::Domain(format!("signed R² must lie in [-1, 1], got {s}")));
            }
            let spec = gamma_from_r2_direction(s.abs(), direction, &cc.sigma_u_given_t)?;
            let gamma = if s < 0.0 { -spec.gamma } else { spec.gamma };
            Ok((s, rr_with(&setup, c, cc, bin, &gamma)?))
        })
        .collect()
}

/// Evenly spaced signed-R² grid from −1 to 1.
pub fn signed_r2_grid(points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

/// Risk-ratio ignorance region with the sensitivity vectors attaining it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RrRegion {
    pub region: IgnoranceRegion<f64>,
    pub gamma_lower: Vec<f64>,
    pub gamma_upper: Vec<f64>,
    /// False when some local refinement ran out of its evaluation budget; the
    /// widest region found is still reported.
    pub converged: bool,
}

struct Search<'a> {
    setup: Setup,
    c: &'a Contrast<f64>,
    cc: &'a ConditionalConfounder<f64>,
    bin: &'a BinaryOutcome<f64>,
    /// Maps whitened `z` (with `‖z‖² = γᵀΣγ`) to `γ`.
    unwhiten: DMatrix<f64>,
    radius: f64,
}

impl Search<'_> {
    fn rr(&self, z: &DVector<f64>) -> f64 {
        rr_with(&self.setup, self.c, self.cc, self.bin, &(&self.unwhiten * z)).unwrap_or(f64::NAN)
    }

    fn gamma(&self, z: &DVector<f64>) -> Vec<f64> {
        (&self.unwhiten * z).iter().copied().collect()
    }
}

/// Minimum and maximum risk ratio over `γᵀΣγ ≤ r2_cap`.
///
/// One confounder: dense scan of the segment then golden-section refinement
/// around the best scan points. Several: 200 random starts in the whitened
/// ball, each refined coordinatewise.
pub fn rr_ignorance_region(
    c: &Contrast<f64>,
    cc: &ConditionalConfounder<f64>,
    bin: &BinaryOutcome<f64>,
    observed: &TreatmentMatrix<f64>,
    r2_cap: f64,
    seed: u64,
) -> Result<RrRegion> {
    if !(0.0..=1.0).contains(&r2_cap) {
        return Err(Error::Domain(format!("R² cap must lie in [0, 1], got {r2_cap}")));
    }
    let sigma = &cc.sigma_u_given_t;
    let rank = psd_rank(sigma);
    if rank == 0 {
        return Err(Error::Precondition("confounder is fully determined by the treatments; the risk ratio is unconstrained".into()));
    }
    if rank < cc.m() {
        warn!("confounder covariance has rank {rank} < {}; searching its range only", cc.m());
    }
    let unwhiten = if rank == cc.m() { sym_inv_sqrt(sigma) } else { pinv_sqrt(sigma) };
    let search = Search { setup: Setup::new(cc, bin, observed)?, c, cc, bin, unwhiten, radius: r2_cap.sqrt() };
    let zero = DVector::zeros(cc.m());
    let naive = search.rr(&zero);
    if !naive.is_finite() {
        return Err(Error::DegenerateRatio { denominator: 0.0 });
    }
    let mut lo = (naive, zero.clone());
    let mut hi = (naive, zero);
    let mut converged = true;
    if r2_cap > 0.0 {
        if cc.m() == 1 {
            for sign in [1.0, -1.0] {
                let (z, v) = scalar_extremum(&search, sign);
                if sign * v > sign * (if sign > 0.0 { hi.0 } else { lo.0 }) {
                    if sign > 0.0 {
                        hi = (v, z);
                    } else {
                        lo = (v, z);
                    }
                }
            }
        } else {
            let results: Vec<_> = (0..RESTARTS as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(r);
                    let start = random_in_ball(&mut rng, cc.m(), search.radius);
                    (coordinate_refine(&search, start.clone(), 1.0), coordinate_refine(&search, start, -1.0))
                })
                .collect();
            for ((zmax, vmax, okmax), (zmin, vmin, okmin)) in results {
                converged &= okmax && okmin;
                if vmax > hi.0 {
                    hi = (vmax, zmax);
                }
                if vmin < lo.0 {
                    lo = (vmin, zmin);
                }
            }
            if !converged {
                warn!("risk-ratio region search hit its evaluation budget; reporting the widest region found");
            }
        }
    }
    Ok(RrRegion {
        region: IgnoranceRegion { naive, lower: lo.0, upper: hi.0, r2_cap, bounded: true, reason: None },
        gamma_lower: search.gamma(&lo.1),
        gamma_upper: search.gamma(&hi.1),
        converged,
    })
}

fn random_in_ball(rng: &mut ChaCha8Rng, m: usize, radius: f64) -> DVector<f64> {
    let d = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = d.norm();
    if n == 0.0 {
        return DVector::zeros(m);
    }
    d * (radius * rng.random::<f64>().powf(1.0 / m as f64) / n)
}

/// Maximizes `sign · RR(z)` on the segment `[−radius, radius]`.
fn scalar_extremum(search: &Search<'_>, sign: f64) -> (DVector<f64>, f64) {
    let r = search.radius;
    let f = |x: f64| sign * search.rr(&DVector::from_element(1, x));
    let xs: Vec<f64> = (0..SCAN_POINTS).map(|i| -r + 2.0 * r * i as f64 / (SCAN_POINTS - 1) as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let h = xs[1] - xs[0];
    let mut best = (xs[0], vals[0]);
    // refine around every local maximum of the scan, not only the largest
    for i in 0..SCAN_POINTS {
        let left = if i == 0 { f64::NEG_INFINITY } else { vals[i - 1] };
        let right = if i + 1 == SCAN_POINTS { f64::NEG_INFINITY } else { vals[i + 1] };
        if vals[i] < left || vals[i] < right {
            continue;
        }
        let (a, b) = ((xs[i] - h).max(-r), (xs[i] + h).min(r));
        let (x, v) = golden_max(&f, a, b);
        let cand = if v >= vals[i] { (x, v) } else { (xs[i], vals[i]) };
        if cand.1 > best.1 {
            best = cand;
        }
    }
    (DVector::from_element(1, best.0), sign * best.1)
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let width = (b - a).abs().max(1e-300);
    for _ in 0..200 {
        if b - a <= 1e-13 * width.max(1.0) {
            break;
        }
        if fc >= fd {
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
    [(x, fx), (a, f(a)), (b, f(b))].into_iter().fold((x, fx), |acc, p| if p.1 > acc.1 { p } else { acc })
}

/// Coordinate ascent on `sign · RR` inside the ball, steps halving until
/// neither the step nor the gain exceeds the tolerance.
fn coordinate_refine(search: &Search<'_>, mut z: DVector<f64>, sign: f64) -> (DVector<f64>, f64, bool) {
    let m = z.len();
    let mut val = sign * search.rr(&z);
    let mut step = 0.25 * search.radius;
    let min_step = REFINE_TOL * search.radius.max(1e-12);
    let mut evals = 0;
    let budget = 20_000;
    while step > min_step {
        let mut improved = false;
        for j in 0..m {
            for dir in [1.0, -1.0] {
                let mut cand = z.clone();
                cand[j] += dir * step;
                let n = cand.norm();
                if n > search.radius {
                    cand *= search.radius / n;
                }
                let v = sign * search.rr(&cand);
                evals += 1;
                if v > val + REFINE_TOL * 1e-3 {
                    val = v;
                    z = cand;
                    improved = true;
                }
            }
        }
        if evals > budget {
            return (z, sign * val, false);
        }
        if !improved {
            step *= 0.5;
        }
    }
    (z, sign * val, true)
}

/// Binary robustness value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryRv {
    pub rv: f64,
    /// True when no confounding with `R² ≤ 1` moves the risk ratio to 1.
    pub robust: bool,
}

/// Smallest `R²` at which the risk-ratio region reaches 1.
///
/// One confounder: the region at cap `r²` is the range of RR over
/// `|γ| ≤ √(r²/Σ)`, so the answer is the root of `RR(γ) = 1` closest to zero,
/// bracketed on a scan and bisected. Several: bisection on the cap against the
/// searched region.
pub fn binary_rv(
    c: &Contrast<f64>,
    cc: &ConditionalConfounder<f64>,
    bin: &BinaryOutcome<f64>,
    observed: &TreatmentMatrix<f64>,
    seed: u64,
) -> Result<BinaryRv> {
    let full = rr_ignorance_region(c, cc, bin, observed, 1.0, seed)?;
    let naive = full.region.naive;
    if naive == 1.0 {
        return Ok(BinaryRv { rv: 0.0, robust: false });
    }
    if !full.region.contains(1.0) {
        return Ok(BinaryRv { rv: 1.0, robust: true });
    }
    if cc.m() == 1 {
        let s = cc.sigma_u_given_t[(0, 0)];
        let setup = Setup::new(cc, bin, observed)?;
        let g = |x: f64| rr_with(&setup, c, cc, bin, &DVector::from_element(1, x)).map(|v| v - 1.0);
        let reach = 1.0 / s.sqrt();
        let steps = 4000;
        let mut best: Option<f64> = None;
        for sign in [1.0, -1.0] {
            let mut prev = (0.0, g(0.0)?);
            for i in 1..=steps {
                let x = sign * reach * i as f64 / steps as f64;
                let v = g(x)?;
                if v == 0.0 || v.signum() != prev.1.signum() {
                    let (mut a, mut b) = (prev.0, x);
                    let fa = prev.1;
                    for _ in 0..200 {
                        let mid = 0.5 * (a + b);
                        if mid == a || mid == b {
                            break;
                        }
                        let fm = g(mid)?;
                        if fm == 0.0 {
                            a = mid;
                            b = mid;
                            break;
                        }
                        if fm.signum() == fa.signum() {
                            a = mid;
                        } else {
                            b = mid;
                        }
                    }
                    let root = 0.5 * (a + b);
                    best = Some(best.map_or(root.abs(), |r: f64| r.min(root.abs())));
                    break;
                }
                prev = (x, v);
            }
        }
        return match best {
            Some(r) => Ok(BinaryRv { rv: (r * r * s).min(1.0), robust: false }),
            None => {
                // the full-cap region reached 1 only at a scan gap; fall back to the cap search
                cap_bisection(c, cc, bin, observed, seed)
            }
        };
    }
    cap_bisection(c, cc, bin, observed, seed)
}

fn cap_bisection(
    c: &Contrast<f64>,
    cc: &ConditionalConfounder<f64>,
    bin: &BinaryOutcome<f64>,
    observed: &TreatmentMatrix<f64>,
    seed: u64,
) -> Result<BinaryRv> {
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if rr_ignorance_region(c, cc, bin, observed, mid, seed)?.region.contains(1.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(BinaryRv { rv: hi, robust: false })
}
