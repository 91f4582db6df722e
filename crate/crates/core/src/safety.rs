//! Tangent-halfspace safety constraints and recursive-feasibility margins.
//!
//! The obstacle is a disc of radius `r` around a Gaussian position. Around
//! each reference point the disc is replaced by the halfspace bounded by its
//! tangent line facing the reference, with normal `m = mu_0 - x_ref` frozen
//! at the first planning step. The chance constraint on that halfspace
//! becomes the deterministic level function
//!
//! ```text
//! l(x) = m^T (x - mu) + r |m| + Gamma_t sqrt(m^T Sigma m) <= 0
//! ```
//!
//! with `Gamma_t` the `1 - eps/T` standard normal quantile.
//!
//! Re-planning one step later replaces `mu` and `Sigma` by their conditional
//! values given the newly observed obstacle position. The margin
//! `c(t, i)` bounds, with probability `1 - gamma_bar`, how much the level at
//! `t` can rise between planning steps `i` and `i + 1`; adding the remaining
//! margins `sum_{i >= tau} c(t, i)` to the constraint at step `tau` keeps the
//! previously planned tail feasible after the update.

use crate::error::{Error, Result};
use crate::gauss::{self, std_normal_quantile, JointGaussianTrajectory, Mat2, Vec2};

/// Risk budget split uniformly over the horizon, plus the per-pair
/// recursive-feasibility budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskAllocation {
    epsilon: f64,
    gamma: f64,
    horizon: usize,
}

impl RiskAllocation {
    pub fn new(epsilon: f64, gamma: f64, horizon: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        Ok(Self { epsilon, gamma, horizon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Per-step risk `eps / T`, identical at every planning step.
    pub fn per_step(&self) -> f64 {
        self.epsilon / self.horizon as f64
    }

    /// Number of `(t, tau)` inclusion events, `tau <= t - 2`.
    pub fn pair_count(&self) -> usize {
        self.horizon * (self.horizon - 1) / 2
    }

    /// Per-pair violation budget `2 gamma / ((T - 1) T)`. With a single step
    /// there are no pairs and the whole budget is returned.
    pub fn gamma_bar(&self) -> f64 {
        match self.pair_count() {
            0 => self.gamma,
            n => self.gamma / n as f64,
        }
    }

    /// `Gamma_t`, the `1 - eps_t` quantile.
    pub fn gamma_t(&self) -> f64 {
        std_normal_quantile(1.0 - self.per_step()).expect("eps_t lies in (0, 1)")
    }

    /// `Gamma_gamma_bar`, the `1 - gamma_bar` quantile.
    pub fn gamma_gamma_bar(&self) -> f64 {
        std_normal_quantile(1.0 - self.gamma_bar()).expect("gamma_bar lies in (0, 1)")
    }
}

/// Normal of the tangent line, `m = mu0 - x_ref`.
pub fn tangent_direction(x_ref: Vec2, mu0: Vec2) -> Result<Vec2> {
    let m = mu0 - x_ref;
    if m.norm() == 0.0 {
        return Err(Error::DegenerateGeometry { step: 0 });
    }
    Ok(m)
}

/// Tangent directions for steps `1..=T` from the first prediction.
/// `reference[t]` is the reference position at step `t`, `t = 0..=T`.
pub fn tangent_directions(reference: &[Vec2], joint_at_0: &JointGaussianTrajectory) -> Result<Vec<Vec2>> {
    joint_at_0
        .steps()
        .map(|t| {
            tangent_direction(reference[t], joint_at_0.mean(t))
                .map_err(|_| Error::DegenerateGeometry { step: t })
        })
        .collect()
}

/// The deterministic safety constraint at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfspaceConstraint {
    pub t: usize,
    pub m: Vec2,
    pub r: f64,
    pub gamma_t: f64,
    pub mu: Vec2,
    pub sigma: Mat2,
    /// Accumulated tightening, zero for the nominal planner.
    pub margin: f64,
}

impl HalfspaceConstraint {
    fn spread(&self, sigma: &Mat2) -> f64 {
        (self.m.dot(&(sigma * self.m))).max(0.0).sqrt()
    }

    /// `l(x)`; non-positive values satisfy the individual chance constraint.
    pub fn nominal_level(&self, x: Vec2) -> f64 {
        self.m.dot(&(x - self.mu)) + self.r * self.m.norm() + self.gamma_t * self.spread(&self.sigma)
    }

    /// Level after re-prediction, evaluated at a realized conditional mean
    /// and covariance.
    pub fn realized_level(&self, x: Vec2, mu_next: Vec2, sigma_next: &Mat2) -> f64 {
        self.m.dot(&(x - mu_next)) + self.r * self.m.norm() + self.gamma_t * self.spread(sigma_next)
    }

    /// `l(x) + margin`, the constraint actually imposed.
    pub fn tightened_level(&self, x: Vec2) -> f64 {
        self.nominal_level(x) + self.margin
    }

    /// Constant part of the tightened level, so that
    /// `tightened_level(x) = m^T x + offset()`.
    pub fn offset(&self) -> f64 {
        self.tightened_level(Vec2::zeros())
    }
}

/// Free functions mirroring the methods, for call sites that read better
/// without a receiver.
pub fn nominal_level(h: &HalfspaceConstraint, x: Vec2) -> f64 {
    h.nominal_level(x)
}

pub fn realized_level(h: &HalfspaceConstraint, x: Vec2, mu_next: Vec2, sigma_next: &Mat2) -> f64 {
    h.realized_level(x, mu_next, sigma_next)
}

/// One-step inclusion event: the halfspace imposed at `tau` still lies inside
/// the halfspace that will be imposed at `tau + 1`, i.e.
/// `l_hat_{t|tau+1}(x) <= l_{t|tau}(x) + c(t, tau)`. The `x` terms cancel, so
/// the event is independent of `x`.
pub fn inclusion_holds(h: &HalfspaceConstraint, mu_next: Vec2, sigma_next: &Mat2, c: f64) -> bool {
    let x = h.mu;
    h.realized_level(x, mu_next, sigma_next) <= h.nominal_level(x) + c
}

/// Margin from the one-sided bound on the level increase. `sd_now`,
/// `sd_next` and `sd_mean` are the standard deviations along `m` of the
/// current prediction, the next conditional prediction, and the next
/// conditional mean.
pub fn margin_from_spreads(gamma_t: f64, gamma_gamma_bar: f64, sd_now: f64, sd_next: f64, sd_mean: f64) -> f64 {
    (-gamma_t * (sd_now - sd_next) + gamma_gamma_bar * sd_mean).max(0.0)
}

fn spread_along(m: &Vec2, sigma: &Mat2) -> f64 {
    m.dot(&(sigma * m)).max(0.0).sqrt()
}

// Covariances entering c(t, i), read off the prediction that will be in
// force at step i (joint_i).
fn margin_from_joint(
    joint_i: &JointGaussianTrajectory,
    t: usize,
    m: &Vec2,
    alloc: &RiskAllocation,
) -> Result<f64> {
    let sigma_now = joint_i.cov(t);
    let sigma_next = gauss::condition(joint_i, t, 1, joint_i.mean(joint_i.origin_step() + 1))?.cov2();
    let sigma_mean = gauss::conditional_mean_distribution(joint_i, t, 1)?.cov2();
    Ok(margin_from_spreads(
        alloc.gamma_t(),
        alloc.gamma_gamma_bar(),
        spread_along(m, &sigma_now),
        spread_along(m, &sigma_next),
        spread_along(m, &sigma_mean),
    ))
}

fn prediction_at(joint_at_0: &JointGaussianTrajectory, i: usize) -> Result<JointGaussianTrajectory> {
    if i == joint_at_0.origin_step() {
        Ok(joint_at_0.clone())
    } else {
        joint_at_0.conditioned_on(i, None)
    }
}

/// Tightening margin `c(t, i)` for timestep `t` between planning steps `i`
/// and `i + 1`, computed from the first prediction. Covariances of later
/// predictions do not depend on the realized positions, so conditioning
/// `joint_at_0` on step `i` yields them exactly.
pub fn margin_step(
    joint_at_0: &JointGaussianTrajectory,
    t: usize,
    i: usize,
    m: Vec2,
    alloc: &RiskAllocation,
) -> Result<f64> {
    if i + 2 > t || t > joint_at_0.horizon() || i < joint_at_0.origin_step() {
        return Err(Error::InvalidStep(format!("margin needs i <= t - 2, got t = {t}, i = {i}")));
    }
    margin_from_joint(&prediction_at(joint_at_0, i)?, t, &m, alloc)
}

/// All margins `c(t, i)` for `2 <= t <= T`, `0 <= i <= t - 2`, their
/// suffix sums, and the tangent directions they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginTable {
    horizon: usize,
    directions: Vec<Vec2>,
    // c[t][i]
    c: Vec<Vec<f64>>,
    // cum[t][tau] for tau in 0..t
    cum: Vec<Vec<f64>>,
    // Sigma_{t|i} as implied by the first prediction, i < t.
    expected_cov: Vec<Vec<Mat2>>,
}

impl MarginTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn direction(&self, t: usize) -> Vec2 {
        self.directions[t - 1]
    }

    pub fn directions(&self) -> &[Vec2] {
        &self.directions
    }

    pub fn c(&self, t: usize, i: usize) -> f64 {
        assert!(i + 2 <= t && t <= self.horizon, "c({t}, {i}) is undefined");
        self.c[t][i]
    }

    /// `sum_{i = tau}^{t - 2} c(t, i)`; zero once `tau >= t - 1`.
    pub fn cum(&self, t: usize, tau: usize) -> f64 {
        assert!(t >= 1 && t <= self.horizon, "step {t} outside horizon");
        if tau + 1 >= t {
            0.0
        } else {
            self.cum[t][tau]
        }
    }

    /// `Sigma_{t|tau}` implied by the first prediction.
    pub fn expected_cov(&self, t: usize, tau: usize) -> Mat2 {
        self.expected_cov[t][tau]
    }

    /// The same table with every margin multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for row in out.c.iter_mut().chain(out.cum.iter_mut()) {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        out
    }
}

/// Fills every `c(t, i)` and the suffix sums.
pub fn build_margin_table(
    joint_at_0: &JointGaussianTrajectory,
    alloc: &RiskAllocation,
    directions: &[Vec2],
) -> Result<MarginTable> {
    let horizon = joint_at_0.horizon();
    if joint_at_0.origin_step() != 0 {
        return Err(Error::InvalidStep("margin table needs the prediction made at step 0".into()));
    }
    if directions.len() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "{} directions for horizon {horizon}",
            directions.len()
        )));
    }
    let mut c = vec![Vec::new(); horizon + 1];
    let mut expected_cov = vec![Vec::new(); horizon + 1];
    for t in 1..=horizon {
        c[t] = vec![0.0; t.saturating_sub(1)];
        expected_cov[t] = vec![Mat2::zeros(); t];
    }
    for i in 0..horizon {
        let joint_i = prediction_at(joint_at_0, i)?;
        for t in (i + 1)..=horizon {
            expected_cov[t][i] = joint_i.cov(t);
        }
        for t in (i + 2)..=horizon {
            c[t][i] = margin_from_joint(&joint_i, t, &directions[t - 1], alloc)?;
        }
    }
    let mut cum = vec![Vec::new(); horizon + 1];
    for t in 1..=horizon {
        let mut row = vec![0.0; t];
        for tau in (0..t.saturating_sub(1)).rev() {
            row[tau] = row[tau + 1] + c[t][tau];
        }
        cum[t] = row;
    }
    Ok(MarginTable { horizon, directions: directions.to_vec(), c, cum, expected_cov })
}

/// Mean-shift bound `|mu_a - mu_b| <= Gamma_t (sqrt|Sigma_a|_F - sqrt|Sigma_b|_F)`
/// on consecutive predictions for the same timestep. Equality counts as
/// satisfied.
pub fn legacy_condition_satisfied(mu_a: Vec2, mu_b: Vec2, sigma_a: &Mat2, sigma_b: &Mat2, gamma_t: f64) -> bool {
    let lhs = (mu_a - mu_b).norm();
    let rhs = gamma_t * (sigma_a.norm().sqrt() - sigma_b.norm().sqrt());
    lhs <= rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{predict, OvModel, OvState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ref_alloc() -> RiskAllocation {
        RiskAllocation::new(0.05, 0.1, 9).unwrap()
    }

    fn ref_model() -> OvModel {
        OvModel::new(Vec2::new(15.0, 0.0), Mat2::new(1.0, 0.0, 0.0, 0.25), 0.5).unwrap()
    }

    fn halfspace(m: Vec2, mu: Vec2, sigma: Mat2, gamma_t: f64) -> HalfspaceConstraint {
        HalfspaceConstraint { t: 1, m, r: 4.0, gamma_t, mu, sigma, margin: 0.0 }
    }

    #[test]
    fn allocation_bookkeeping() {
        let a = ref_alloc();
        assert!((a.per_step() * 9.0 - 0.05).abs() < 1e-12);
        assert_eq!(a.pair_count(), 36);
        assert!((a.gamma_bar() * 36.0 - 0.1).abs() < 1e-12);
        assert!((a.gamma_t() - 2.539184813651313).abs() < 1e-9);
        assert!((a.gamma_gamma_bar() - 2.7729212946086634).abs() < 1e-9);
        assert!(RiskAllocation::new(0.0, 0.1, 9).is_err());
        assert!(RiskAllocation::new(0.05, 1.0, 9).is_err());
    }

    #[test]
    fn tangent_direction_examples() {
        assert_eq!(tangent_direction(Vec2::zeros(), Vec2::new(5.0, 0.0)).unwrap(), Vec2::new(5.0, 0.0));
        let m = tangent_direction(Vec2::new(1.0, 2.0), Vec2::new(4.0, 6.0)).unwrap();
        assert_eq!(m, Vec2::new(3.0, 4.0));
        assert_eq!(m.norm(), 5.0);
        assert!(tangent_direction(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn nominal_level_examples() {
        let h = halfspace(Vec2::new(5.0, 0.0), Vec2::new(5.0, 0.0), Mat2::zeros(), 2.5);
        assert!((h.nominal_level(Vec2::zeros()) + 5.0).abs() < 1e-12);
        let h = halfspace(Vec2::new(3.0, 0.0), Vec2::new(3.0, 0.0), Mat2::zeros(), 2.5);
        assert!((h.nominal_level(Vec2::zeros()) - 3.0).abs() < 1e-12);
        let g = ref_alloc().gamma_t();
        let h = halfspace(Vec2::new(1.0, 0.0), Vec2::new(10.0, 0.0), Mat2::new(1.0, 0.0, 0.0, 0.25), g);
        assert!((h.nominal_level(Vec2::zeros()) - (-6.0 + g)).abs() < 1e-12);
        assert!((h.nominal_level(Vec2::zeros()) + 3.4607).abs() < 1e-3);
    }

    #[test]
    fn realized_level_reduces_to_nominal_and_is_affine_in_mean() {
        let h = halfspace(Vec2::new(2.0, 1.0), Vec2::new(6.0, 3.0), Mat2::new(0.5, 0.1, 0.1, 0.2), 2.0);
        let x = Vec2::new(-1.0, 0.5);
        assert_eq!(h.realized_level(x, h.mu, &h.sigma), h.nominal_level(x));
        let delta = Vec2::new(0.3, -0.2);
        let shifted = h.realized_level(x, h.mu + delta, &h.sigma);
        assert!((h.nominal_level(x) - shifted - h.m.dot(&delta)).abs() < 1e-12);
    }

    #[test]
    fn margin_vanishes_without_mean_uncertainty() {
        assert_eq!(margin_from_spreads(2.5, 2.8, 1.0, 1.0, 0.0), 0.0);
        // Shrinking covariance with the mean quantile removed clips to zero.
        assert_eq!(margin_from_spreads(2.5, 0.0, 1.0, 0.8, 0.6), 0.0);
    }

    #[test]
    fn margin_matches_closed_form_random_walk() {
        let joint = predict(&ref_model(), &OvState::new(Vec2::zeros(), 0), 9).unwrap();
        let alloc = ref_alloc();
        let m = Vec2::new(1.0, 0.0);
        let (gt, gg) = (alloc.gamma_t(), alloc.gamma_gamma_bar());
        let expected = -gt * (1.0 - 0.75f64.sqrt()) + gg * 0.5;
        for i in 0..=5 {
            let c = margin_step(&joint, i + 4, i, m, &alloc).unwrap();
            assert!((c - expected).abs() < 1e-12, "i = {i}: {c}");
        }
        assert!((expected - 1.0462743871787115).abs() < 1e-9);
    }

    #[test]
    fn margin_step_rejects_adjacent_steps() {
        let joint = predict(&ref_model(), &OvState::new(Vec2::zeros(), 0), 9).unwrap();
        assert!(margin_step(&joint, 3, 2, Vec2::new(1.0, 0.0), &ref_alloc()).is_err());
    }

    fn ref_table(model: &OvModel, horizon: usize) -> MarginTable {
        let joint = predict(model, &OvState::new(Vec2::new(-8.0, 3.5), 0), horizon).unwrap();
        let reference: Vec<Vec2> = (0..=horizon).map(|t| Vec2::new(7.5 * t as f64, 0.4 * t as f64)).collect();
        let dirs = tangent_directions(&reference, &joint).unwrap();
        let alloc = RiskAllocation::new(0.05, 0.1, horizon).unwrap();
        build_margin_table(&joint, &alloc, &dirs).unwrap()
    }

    #[test]
    fn two_step_table() {
        let table = ref_table(&ref_model(), 2);
        assert_eq!(table.cum(2, 0), table.c(2, 0));
        assert_eq!(table.cum(2, 1), 0.0);
        assert!(table.c(2, 0) > 0.0);
    }

    #[test]
    fn table_sums_match_margin_steps() {
        let model = ref_model();
        let table = ref_table(&model, 9);
        let joint = predict(&model, &OvState::new(Vec2::new(-8.0, 3.5), 0), 9).unwrap();
        let alloc = ref_alloc();
        for t in 2..=9 {
            let mut total = 0.0;
            for i in 0..=(t - 2) {
                let c = margin_step(&joint, t, i, table.direction(t), &alloc).unwrap();
                assert!(c >= 0.0);
                assert!((c - table.c(t, i)).abs() < 1e-12);
                total += c;
            }
            assert!((table.cum(t, 0) - total).abs() < 1e-12);
            for tau in 0..t {
                assert!(table.cum(t, tau) >= table.cum(t, tau + 1));
                if tau + 2 <= t {
                    assert!((table.cum(t, tau) - table.cum(t, tau + 1) - table.c(t, tau)).abs() < 1e-12);
                }
            }
            assert_eq!(table.cum(t, t - 1), 0.0);
        }
    }

    #[test]
    fn deterministic_obstacle_needs_no_margin() {
        let model = OvModel::new(Vec2::new(15.0, 0.0), Mat2::zeros(), 0.5).unwrap();
        let table = ref_table(&model, 9);
        for t in 2..=9 {
            for i in 0..=(t - 2) {
                assert_eq!(table.c(t, i), 0.0);
            }
        }
    }

    #[test]
    fn expected_covariances_match_fresh_predictions() {
        let model = ref_model();
        let table = ref_table(&model, 9);
        for tau in 0..9 {
            let fresh = predict(&model, &OvState::new(Vec2::new(3.0, 1.0), tau), 9).unwrap();
            for t in (tau + 1)..=9 {
                assert!((fresh.cov(t) - table.expected_cov(t, tau)).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn legacy_condition_examples() {
        let s = Mat2::new(1.0, 0.2, 0.2, 0.5);
        assert!(legacy_condition_satisfied(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0), &s, &s, 2.0));
        // sqrt-Frobenius gap of exactly 0.1
        let a = Mat2::identity() * (1.1f64.powi(2) / 2f64.sqrt());
        let b = Mat2::identity() * (1.0 / 2f64.sqrt());
        assert!((a.norm().sqrt() - b.norm().sqrt() - 0.1).abs() < 1e-12);
        assert!(!legacy_condition_satisfied(Vec2::new(1.0, 0.0), Vec2::zeros(), &a, &b, 2.54));
        // Covariance growth makes the bound negative even without a mean shift.
        assert!(!legacy_condition_satisfied(Vec2::zeros(), Vec2::zeros(), &b, &a, 2.54));
    }

    #[test]
    fn one_step_inclusion_frequency() {
        // Sample the next observation and re-condition; the inclusion event
        // must hold with frequency at least 1 - gamma_bar.
        let model = ref_model();
        let alloc = ref_alloc();
        let table = ref_table(&model, 9);
        let joint = predict(&model, &OvState::new(Vec2::new(-8.0, 3.5), 0), 9).unwrap();
        let first = joint.marginal(1).unwrap();
        let n = 100_000;
        let gb = alloc.gamma_bar();
        let floor = 1.0 - gb - 3.0 * (gb * (1.0 - gb) / n as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for t in [2usize, 5, 9] {
            let h = HalfspaceConstraint {
                t,
                m: table.direction(t),
                r: 4.0,
                gamma_t: alloc.gamma_t(),
                mu: joint.mean(t),
                sigma: joint.cov(t),
                margin: 0.0,
            };
            let mut hits = 0usize;
            for _ in 0..n {
                let o = first.sample(&mut rng);
                let next = gauss::condition(&joint, t, 1, Vec2::new(o[0], o[1])).unwrap();
                if inclusion_holds(&h, next.mean2(), &next.cov2(), table.c(t, 0)) {
                    hits += 1;
                }
            }
            let freq = hits as f64 / n as f64;
            assert!(freq >= floor, "t = {t}: {freq} < {floor}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tightened_constraint_implies_nominal(
                mx in -5.0f64..5.0, my in -5.0f64..5.0,
                x in -20.0f64..20.0, y in -20.0f64..20.0,
                margin in 0.0f64..10.0,
            ) {
                prop_assume!(mx.abs() + my.abs() > 1e-3);
                let mut h = halfspace(Vec2::new(mx, my), Vec2::new(4.0, 1.0), Mat2::new(0.5, 0.0, 0.0, 0.2), 2.5);
                h.margin = margin;
                let p = Vec2::new(x, y);
                if h.tightened_level(p) <= 0.0 {
                    prop_assert!(h.nominal_level(p) <= 0.0);
                }
            }

            #[test]
            fn inclusion_event_is_independent_of_x(
                dx in -3.0f64..3.0, dy in -3.0f64..3.0,
                x in -20.0f64..20.0, y in -20.0f64..20.0,
            ) {
                let h = halfspace(Vec2::new(3.0, -1.0), Vec2::new(4.0, 1.0), Mat2::new(0.5, 0.0, 0.0, 0.2), 2.5);
                let mu_next = h.mu + Vec2::new(dx, dy);
                let sigma_next = h.sigma * 0.5;
                let p = Vec2::new(x, y);
                let at_p = h.realized_level(p, mu_next, &sigma_next) <= h.nominal_level(p) + 0.7;
                let gap = (h.realized_level(p, mu_next, &sigma_next) - h.nominal_level(p) - 0.7).abs();
                prop_assume!(gap > 1e-9);
                prop_assert_eq!(at_p, inclusion_holds(&h, mu_next, &sigma_next, 0.7));
            }
        }
    }
}
