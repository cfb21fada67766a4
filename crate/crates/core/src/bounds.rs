//! Closed-form confounding bias, worst-case bounds, ignorance regions and
//! robustness values for Gaussian-copula models.
//!
//! Everything reduces to the whitened confounder shift
//! `w = Σ_{u|t}^{-1/2} (μ_{u|t1} − μ_{u|t2})`: the worst-case bias at
//! confounding level `R²` is `σ_{y|t} √R² ‖w‖`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::copula::SensitivitySpec;
use crate::error::{dim_check, Error, Result};
use crate::linalg::{rank_cutoff, sym_eigen_desc, EIGEN_FLOOR};
use crate::model::{mu_delta, ConditionalConfounder, Contrast, FactorModel};
use crate::num::Real;

/// Relative size of the out-of-range component of `μ_{u|Δt}` that makes the
/// bias unbounded when `Σ_{u|t}` is singular.
const ROW_SPACE_RTOL: f64 = 1e-8;

/// A bias that is either finite or unbounded, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub enum Bias<S: Real> {
    Bounded(S),
    Unbounded(String),
}

impl<S: Real> Bias<S> {
    pub fn value(&self) -> Option<S> {
        match self {
            Bias::Bounded(v) => Some(*v),
            Bias::Unbounded(_) => None,
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Bias::Bounded(_))
    }

    /// Finite value, or `+∞` when unbounded.
    pub fn or_infinity(&self) -> f64 {
        self.value().map_or(f64::INFINITY, |v| v.f64())
    }
}

/// `Σ^{-1/2} μ`, or the reason it does not exist.
#[derive(Debug, Clone)]
pub(crate) enum Whitened<S: Real> {
    Finite(DVector<S>),
    Unbounded(String),
}

pub(crate) fn whiten<S: Real>(sigma: &DMatrix<S>, rank: usize, mu: &DVector<S>) -> Whitened<S> {
    let m = mu.len();
    let (values, vectors) = sym_eigen_desc(sigma);
    if rank == m {
        let floor = S::of(EIGEN_FLOOR);
        let coords = vectors.transpose() * mu;
        let scaled = DVector::from_fn(m, |i, _| coords[i] / values[i].max(floor).sqrt());
        return Whitened::Finite(&vectors * scaled);
    }
    let cutoff = rank_cutoff(&values);
    let coords = vectors.transpose() * mu;
    let mut null_sq = S::zero();
    let mut scaled = DVector::zeros(m);
    for i in 0..m {
        if values[i] > cutoff {
            scaled[i] = coords[i] / values[i].sqrt();
        } else {
            null_sq += coords[i] * coords[i];
        }
    }
    if null_sq.sqrt() > S::of(ROW_SPACE_RTOL) * mu.norm() {
        return Whitened::Unbounded(
            "the contrast moves the confounder mean outside the row space of the singular Σ_{u|t}".into(),
        );
    }
    Whitened::Finite(&vectors * scaled)
}

fn whitened_shift<S: Real>(cc: &ConditionalConfounder<S>, c: &Contrast<S>) -> Result<(DVector<S>, Whitened<S>)> {
    let mu = mu_delta(cc, c)?;
    let w = whiten(&cc.sigma_u_given_t, cc.rank, &mu);
    Ok((mu, w))
}

fn check_r2<S: Real>(r2: S) -> Result<()> {
    if !(r2 >= S::zero() && r2 <= S::one()) {
        return Err(Error::Domain(format!("R² must lie in [0, 1], got {r2}")));
    }
    Ok(())
}

/// Confounding bias of the naive contrast, `σ_{y|t} γᵀ(μ_{u|t1} − μ_{u|t2})`.
pub fn bias_closed_form<S: Real>(spec: &SensitivitySpec<S>, cc: &ConditionalConfounder<S>, sigma_y_given_t: S, c: &Contrast<S>) -> Result<S> {
    dim_check("sensitivity vector", cc.m(), spec.m())?;
    Ok(sigma_y_given_t * spec.gamma.dot(&mu_delta(cc, c)?))
}

/// Largest bias over all `γ` with `γᵀΣγ ≤ r2`.
pub fn worst_case_bias<S: Real>(cc: &ConditionalConfounder<S>, sigma_y_given_t: S, r2: S, c: &Contrast<S>) -> Result<Bias<S>> {
    check_r2(r2)?;
    Ok(match whitened_shift(cc, c)?.1 {
        Whitened::Finite(w) => Bias::Bounded(sigma_y_given_t * r2.sqrt() * w.norm()),
        Whitened::Unbounded(reason) => Bias::Unbounded(reason),
    })
}

/// Direction `d*` attaining the worst-case bias.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstDirection<S: Real> {
    pub direction: DVector<S>,
    /// False when the contrast does not move the confounder mean at all.
    pub defined: bool,
}

/// `d* ∝ Σ^{-1/2} μ_{u|Δt}`, oriented so the resulting bias is positive.
pub fn worst_case_direction<S: Real>(cc: &ConditionalConfounder<S>, c: &Contrast<S>) -> Result<WorstDirection<S>> {
    let (mu, w) = whitened_shift(cc, c)?;
    let w = match w {
        Whitened::Finite(w) => w,
        Whitened::Unbounded(reason) => return Err(Error::Precondition(format!("no worst-case direction: {reason}"))),
    };
    let norm = w.norm();
    if mu.norm() == S::zero() || norm == S::zero() {
        return Ok(WorstDirection { direction: DVector::zeros(cc.m()), defined: false });
    }
    Ok(WorstDirection { direction: w / norm, defined: true })
}

/// Range of effects consistent with the data at a confounding level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IgnoranceRegion<S: Real> {
    pub naive: S,
    pub lower: S,
    pub upper: S,
    pub r2_cap: S,
    pub bounded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl<S: Real> IgnoranceRegion<S> {
    pub fn contains(&self, x: S) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn excludes_zero(&self) -> bool {
        !self.contains(S::zero())
    }

    pub fn width(&self) -> S {
        self.upper - self.lower
    }

    pub(crate) fn unbounded(naive: S, r2_cap: S, reason: String) -> Self {
        Self {
            naive,
            lower: S::of(f64::NEG_INFINITY),
            upper: S::of(f64::INFINITY),
            r2_cap,
            bounded: false,
            reason: Some(reason),
        }
    }
}

/// `naive ± worst_case_bias`.
pub fn ignorance_region<S: Real>(naive: S, cc: &ConditionalConfounder<S>, sigma_y_given_t: S, r2: S, c: &Contrast<S>) -> Result<IgnoranceRegion<S>> {
    Ok(match worst_case_bias(cc, sigma_y_given_t, r2, c)? {
        Bias::Bounded(b) => IgnoranceRegion { naive, lower: naive - b, upper: naive + b, r2_cap: r2, bounded: true, reason: None },
        Bias::Unbounded(reason) => IgnoranceRegion::unbounded(naive, r2, reason),
    })
}

/// Robustness value with its saturation flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessValue<S: Real> {
    pub rv: S,
    /// True when no admissible confounder can explain the effect away.
    pub robust: bool,
}

/// Smallest `R²` at which the ignorance region reaches zero, clipped to 1.
pub fn robustness_value<S: Real>(naive: S, cc: &ConditionalConfounder<S>, sigma_y_given_t: S, c: &Contrast<S>) -> Result<RobustnessValue<S>> {
    let w = match whitened_shift(cc, c)?.1 {
        Whitened::Finite(w) => w,
        Whitened::Unbounded(reason) => {
            return Err(Error::Precondition(format!("robustness value needs a bounded region: {reason}")))
        }
    };
    if naive == S::zero() {
        return Ok(RobustnessValue { rv: S::zero(), robust: false });
    }
    let scale = sigma_y_given_t * sigma_y_given_t * w.norm_squared();
    if scale <= S::zero() {
        return Ok(RobustnessValue { rv: S::one(), robust: true });
    }
    let rv = naive * naive / scale;
    if rv > S::one() {
        Ok(RobustnessValue { rv: S::one(), robust: true })
    } else {
        Ok(RobustnessValue { rv, robust: false })
    }
}

/// Bias bound for one treatment from partial R² values:
/// `√(R²_{T~U}/(1 − R²_{T~U}) · R²_{Y~U|T} · σ²_{y|t}/σ²_T)`.
pub fn single_treatment_bias<S: Real>(r2_t_u: S, r2_y_u_t: S, sigma_y_given_t: S, sigma_t: S) -> Result<Bias<S>> {
    if !(r2_t_u >= S::zero() && r2_t_u <= S::one()) {
        return Err(Error::Domain(format!("R²_(T~U) must lie in [0, 1], got {r2_t_u}")));
    }
    check_r2(r2_y_u_t)?;
    if sigma_y_given_t <= S::zero() || sigma_t <= S::zero() {
        return Err(Error::Domain("standard deviations must be positive".into()));
    }
    if r2_t_u == S::one() {
        return Ok(Bias::Unbounded("the confounder explains all treatment variation".into()));
    }
    let ratio = sigma_y_given_t / sigma_t;
    Ok(Bias::Bounded((r2_t_u / (S::one() - r2_t_u) * r2_y_u_t).sqrt() * ratio))
}

/// Worst contrast direction and unbiased directions of a factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSweep<S: Real> {
    /// Worst-case bias over unit-norm contrasts.
    pub max_bias: S,
    /// First left singular vector of `B`.
    pub argmax_delta: DVector<S>,
    /// Orthonormal basis of the null space of `Bᵀ`, one column per direction.
    pub null_space_basis: DMatrix<S>,
}

/// Bias geometry over unit contrasts `‖Δt‖ = 1`: the maximum
/// `√(d₁²/(d₁² + σ²) · σ²_{y|t}/σ² · R²)` is attained along `u₁`, and contrasts
/// orthogonal to every column of `B` are unbiased.
pub fn contrast_bound_sweep<S: Real>(fm: &FactorModel<S>, sigma_y_given_t: S, r2: S) -> Result<BoundSweep<S>> {
    check_r2(r2)?;
    let k = fm.k();
    let bbt = &fm.b_hat * fm.b_hat.transpose();
    let (values, vectors) = sym_eigen_desc(&bbt);
    let cutoff = rank_cutoff(&values);
    let rank = values.iter().filter(|&&v| v > cutoff).count();
    let mut argmax = vectors.column(0).into_owned();
    let mut best = 0;
    for i in 1..k {
        if argmax[i].abs() > argmax[best].abs() {
            best = i;
        }
    }
    if argmax[best] < S::zero() {
        argmax.neg_mut();
    }
    let null_space_basis = vectors.columns(rank, k - rank).into_owned();
    let d1_sq = values[0].max(S::zero());
    let s2 = fm.sigma2_t_given_u;
    let max_bias = (d1_sq / (d1_sq + s2) * sigma_y_given_t * sigma_y_given_t / s2 * r2).sqrt();
    Ok(BoundSweep { max_bias, argmax_delta: argmax, null_space_basis })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_inv_sqrt;
    use crate::model::conditional_confounder;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn scalar_cc() -> ConditionalConfounder<f64> {
        ConditionalConfounder::new(dmatrix![0.4], dmatrix![0.2], None).unwrap()
    }

    fn unit_scalar() -> Contrast<f64> {
        Contrast::new(dvector![1.0], dvector![0.0]).unwrap()
    }

    #[test]
    fn zero_gamma_has_zero_bias() {
        let cc = scalar_cc();
        let b = bias_closed_form(&SensitivitySpec::zero(1), &cc, 1.0, &unit_scalar()).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn scalar_bias_at_half_r2() {
        let cc = scalar_cc();
        let gamma = dvector![(0.5f64 / 0.2).sqrt()];
        let spec = SensitivitySpec::new(gamma, &cc.sigma_u_given_t).unwrap();
        let b = bias_closed_form(&spec, &cc, 1.0, &unit_scalar()).unwrap();
        assert_relative_eq!(b, 0.5f64.sqrt() * 0.4 / 0.2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(b, 0.632_455_532_033_675_9, epsilon = 1e-14);
    }

    #[test]
    fn scalar_worst_case_region_and_rv() {
        let cc = scalar_cc();
        let c = unit_scalar();
        assert_eq!(worst_case_bias(&cc, 1.0, 0.0, &c).unwrap(), Bias::Bounded(0.0));
        let b = worst_case_bias(&cc, 1.0, 1.0, &c).unwrap().value().unwrap();
        assert_relative_eq!(b, 0.4 / 0.2f64.sqrt(), epsilon = 1e-14);
        let region = ignorance_region(1.0, &cc, 1.0, 1.0, &c).unwrap();
        assert_relative_eq!(region.lower, 1.0 - 0.894_427_191, epsilon = 1e-9);
        assert_relative_eq!(region.upper, 1.0 + 0.894_427_191, epsilon = 1e-9);
        let point = ignorance_region(1.0, &cc, 1.0, 0.0, &c).unwrap();
        assert_eq!((point.lower, point.upper), (1.0, 1.0));
        let rv = robustness_value(0.4472, &cc, 1.0, &c).unwrap();
        assert_relative_eq!(rv.rv, 0.4472f64.powi(2) / 0.8, epsilon = 1e-12);
        assert_relative_eq!(rv.rv, 0.25, epsilon = 1e-4);
        assert_eq!(robustness_value(0.0, &cc, 1.0, &c).unwrap().rv, 0.0);
        assert!(robustness_value(5.0, &cc, 1.0, &c).unwrap().robust);
    }

    #[test]
    fn r2_outside_unit_interval_is_rejected() {
        assert!(matches!(worst_case_bias(&scalar_cc(), 1.0, 1.5, &unit_scalar()), Err(Error::Domain(_))));
        assert!(matches!(worst_case_bias(&scalar_cc(), 1.0, -0.1, &unit_scalar()), Err(Error::Domain(_))));
    }

    #[test]
    fn worst_direction_examples() {
        let d = worst_case_direction(&scalar_cc(), &Contrast::new(dvector![-2.0], dvector![0.0]).unwrap()).unwrap();
        assert_eq!(d.direction[0], -1.0);
        let cc = ConditionalConfounder::new(DMatrix::identity(2, 2), dmatrix![0.5, 0.0; 0.0, 0.1], None).unwrap();
        let c = Contrast::new(dvector![1.0, 1.0], dvector![0.0, 0.0]).unwrap();
        let d = worst_case_direction(&cc, &c).unwrap();
        assert_relative_eq!(d.direction[0], 0.408_248_290_463_863, epsilon = 1e-12);
        assert_relative_eq!(d.direction[1], 0.912_870_929_175_276_9, epsilon = 1e-12);
        let none = worst_case_direction(&cc, &Contrast::new(dvector![1.0, 1.0], dvector![1.0, 1.0]).unwrap()).unwrap();
        assert!(!none.defined);
    }

    #[test]
    fn singular_covariance_outside_row_space_is_unbounded() {
        let cc = ConditionalConfounder::new(DMatrix::identity(2, 2), dmatrix![1.0, 0.0; 0.0, 0.0], None).unwrap();
        assert_eq!(cc.rank, 1);
        let out = Contrast::new(dvector![0.0, 1.0], dvector![0.0, 0.0]).unwrap();
        assert!(!worst_case_bias(&cc, 1.0, 0.5, &out).unwrap().is_bounded());
        let region = ignorance_region(0.3, &cc, 1.0, 0.5, &out).unwrap();
        assert!(!region.bounded && region.lower == f64::NEG_INFINITY && region.upper == f64::INFINITY);
        let inside = Contrast::new(dvector![2.0, 0.0], dvector![0.0, 0.0]).unwrap();
        assert_relative_eq!(worst_case_bias(&cc, 1.0, 0.25, &inside).unwrap().value().unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn single_treatment_examples() {
        assert_eq!(single_treatment_bias(0.3, 0.0, 1.0, 1.0).unwrap(), Bias::Bounded(0.0));
        assert_relative_eq!(single_treatment_bias(0.5, 1.0, 1.0, 1.0).unwrap().value().unwrap(), 1.0);
        assert!(!single_treatment_bias(1.0, 0.5, 1.0, 1.0).unwrap().is_bounded());
        let mut last = 0.0;
        for i in 0..100 {
            let r = 0.9 + 0.099_9 * i as f64 / 99.0;
            let b = single_treatment_bias(r, 0.5, 1.0, 1.0).unwrap().value().unwrap();
            assert!(b > last);
            last = b;
        }
        assert!(last > 10.0);
    }

    #[test]
    fn sweep_for_single_factor() {
        let b = dmatrix![2.0; 0.5; -0.4; 0.2];
        let fm = FactorModel::from_parts(b.clone(), 1.0, None).unwrap();
        let sweep = contrast_bound_sweep(&fm, 1.0, 1.0).unwrap();
        assert_relative_eq!(sweep.max_bias, (4.45f64 / 5.45).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(sweep.max_bias, 0.9036, epsilon = 1e-4);
        assert_eq!(sweep.null_space_basis.ncols(), 3);
        let cc = conditional_confounder(&fm).unwrap();
        let at = |delta: DVector<f64>| {
            let c = Contrast::new(delta, DVector::zeros(4)).unwrap();
            worst_case_bias(&cc, 1.0, 1.0, &c).unwrap().value().unwrap()
        };
        assert_relative_eq!(at(sweep.argmax_delta.clone()), sweep.max_bias, epsilon = 1e-12);
        for j in 0..3 {
            assert!(at(sweep.null_space_basis.column(j).into_owned()) < 1e-10);
        }
        let mut last = f64::INFINITY;
        let n0 = sweep.null_space_basis.column(0).into_owned();
        for i in 0..=20 {
            let theta = std::f64::consts::FRAC_PI_2 * i as f64 / 20.0;
            let v = at(&sweep.argmax_delta * theta.cos() + &n0 * theta.sin());
            assert!(v <= last + 1e-12);
            last = v;
        }
        assert!(last < 1e-10);
        let zero = contrast_bound_sweep(&FactorModel::from_parts(DMatrix::zeros(4, 1), 1.0, None).unwrap(), 1.0, 1.0).unwrap();
        assert_eq!(zero.max_bias, 0.0);
    }

    fn random_cc(rng: &mut ChaCha8Rng, k: usize, m: usize) -> ConditionalConfounder<f64> {
        let b = DMatrix::from_fn(k, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        conditional_confounder(&FactorModel::from_parts(b, rng.random_range(0.2..2.0), None).unwrap()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn worst_case_is_attained_and_never_exceeded(seed in any::<u64>(), k in 2usize..10, m_raw in 1usize..4, r2 in 0.0f64..1.0) {
            let m = m_raw.min(k - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cc = random_cc(&mut rng, k, m);
            let delta = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let c = Contrast::new(delta, DVector::zeros(k)).unwrap();
            let sigma_y = 1.3;
            let bound = worst_case_bias(&cc, sigma_y, r2, &c).unwrap().value().unwrap();
            let root = sym_inv_sqrt(&cc.sigma_u_given_t);
            for _ in 0..200 {
                let d = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
                let scale: f64 = rng.random::<f64>();
                let spec = SensitivitySpec::new(&root * d * (r2 * scale).sqrt(), &cc.sigma_u_given_t).unwrap();
                let b = bias_closed_form(&spec, &cc, sigma_y, &c).unwrap();
                prop_assert!(b.abs() <= bound * (1.0 + 1e-9) + 1e-300);
            }
            let d = worst_case_direction(&cc, &c).unwrap();
            let spec = SensitivitySpec::new(&root * &d.direction * r2.sqrt(), &cc.sigma_u_given_t).unwrap();
            let b = bias_closed_form(&spec, &cc, sigma_y, &c).unwrap();
            prop_assert!((b - bound).abs() <= 1e-10 * bound.max(1.0));
        }

        #[test]
        fn regions_are_nested_in_r2(seed in any::<u64>(), r_a in 0.0f64..1.0, r_b in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cc = random_cc(&mut rng, 5, 2);
            let c = Contrast::unit(5, 1).unwrap();
            let (lo, hi) = if r_a <= r_b { (r_a, r_b) } else { (r_b, r_a) };
            let a = ignorance_region(0.7, &cc, 1.0, lo, &c).unwrap();
            let b = ignorance_region(0.7, &cc, 1.0, hi, &c).unwrap();
            prop_assert!(b.lower <= a.lower && a.upper <= b.upper);
            prop_assert!(a.contains(a.naive));
        }

        #[test]
        fn bounds_survive_reparameterization(seed in any::<u64>(), naive in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cc = random_cc(&mut rng, 6, 3);
            let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = &g * g.transpose() + DMatrix::identity(3, 3) * 0.2;
            let moved = cc.reparameterize(&a).unwrap();
            let c = Contrast::new(DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal)), DVector::zeros(6)).unwrap();
            let b1 = worst_case_bias(&cc, 1.0, 0.6, &c).unwrap().value().unwrap();
            let b2 = worst_case_bias(&moved, 1.0, 0.6, &c).unwrap().value().unwrap();
            prop_assert!((b1 - b2).abs() <= 1e-8 * b1.max(1e-12));
            let rv1 = robustness_value(naive, &cc, 1.0, &c).unwrap().rv;
            let rv2 = robustness_value(naive, &moved, 1.0, &c).unwrap().rv;
            prop_assert!((rv1 - rv2).abs() <= 1e-8 * rv1.max(1e-12));
        }

        #[test]
        fn rv_closes_the_region(seed in any::<u64>(), naive in 0.01f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cc = random_cc(&mut rng, 4, 1);
            let c = Contrast::unit(4, 0).unwrap();
            let rv = robustness_value(naive, &cc, 1.0, &c).unwrap();
            if !rv.robust {
                let b = worst_case_bias(&cc, 1.0, rv.rv, &c).unwrap().value().unwrap();
                prop_assert!((b - naive).abs() <= 1e-10);
            }
        }
    }
}
