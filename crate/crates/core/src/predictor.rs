//! Ideal predictor for the obstacle vehicle.
//!
//! The obstacle is a planar single integrator whose velocity is redrawn
//! i.i.d. from `N(v_nominal, Q)` at every step. Predictions are made with the
//! same generative model, so predicted marginals follow the true
//! distribution and conditioning a prediction on a future position gives the
//! same law as predicting afresh from that position.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gauss::{self, Gaussian, JointGaussianTrajectory, Mat2, Vec2};

/// Obstacle motion model.
#[derive(Debug, Clone, PartialEq)]
pub struct OvModel {
    nominal_velocity: Vec2,
    velocity_cov: Mat2,
    dt: f64,
    velocity: Gaussian,
}

impl OvModel {
    pub fn new(nominal_velocity: Vec2, velocity_cov: Mat2, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("sampling time must be positive, got {dt}")));
        }
        let velocity = Gaussian::new_2d(nominal_velocity, velocity_cov)?;
        Ok(Self { nominal_velocity, velocity_cov, dt, velocity })
    }

    pub fn nominal_velocity(&self) -> Vec2 {
        self.nominal_velocity
    }

    pub fn velocity_cov(&self) -> Mat2 {
        self.velocity_cov
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Covariance of a single position increment, `dt^2 Q`.
    pub fn step_cov(&self) -> Mat2 {
        self.velocity_cov * (self.dt * self.dt)
    }
}

/// Observed obstacle position at a timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvState {
    pub position: Vec2,
    pub step: usize,
}

impl OvState {
    pub fn new(position: Vec2, step: usize) -> Self {
        Self { position, step }
    }
}

/// Anything that turns an observation into a joint trajectory prediction.
pub trait Predictor {
    fn predict(&self, obs: &OvState, horizon: usize) -> Result<JointGaussianTrajectory>;
}

impl Predictor for OvModel {
    fn predict(&self, obs: &OvState, horizon: usize) -> Result<JointGaussianTrajectory> {
        predict(self, obs, horizon)
    }
}

/// Joint prediction of the obstacle positions at `obs.step + 1 ..= horizon`.
///
/// Positions `k` steps ahead have mean `o + k dt v` and covariance
/// `k dt^2 Q`; two steps share the increments up to the earlier one, so
/// their cross-covariance is `min(k1, k2) dt^2 Q`.
pub fn predict(model: &OvModel, obs: &OvState, horizon: usize) -> Result<JointGaussianTrajectory> {
    if obs.step >= horizon {
        return Err(Error::EmptyHorizon { step: obs.step, horizon });
    }
    let n = horizon - obs.step;
    let step_cov = model.step_cov();
    let means = (1..=n)
        .map(|k| obs.position + model.nominal_velocity * (k as f64 * model.dt))
        .collect();
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let shared = (i.min(j) + 1) as f64;
            cov.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(&(step_cov * shared));
        }
    }
    JointGaussianTrajectory::new(obs.step, horizon, means, cov)
}

/// Advances the true obstacle by one step with a freshly drawn velocity.
pub fn simulate_step<R: Rng + ?Sized>(model: &OvModel, state: &OvState, rng: &mut R) -> OvState {
    let v = model.velocity.sample(rng);
    OvState {
        position: state.position + Vec2::new(v[0], v[1]) * model.dt,
        step: state.step + 1,
    }
}

/// Checks that conditioning the prediction made at `tau` on the position at
/// `tau + 1` reproduces the marginal at `t` of a fresh prediction from that
/// position, over a grid of conditioning values.
pub fn verify_conditional_invariance<P: Predictor + ?Sized>(
    predictor: &P,
    obs: &OvState,
    t: usize,
    horizon: usize,
    tolerance: f64,
) -> bool {
    let tau = obs.step;
    if tau + 1 >= t || t > horizon {
        return false;
    }
    let Ok(joint) = predictor.predict(obs, horizon) else {
        return false;
    };
    let centre = joint.mean(tau + 1);
    let sd = joint.cov(tau + 1).diagonal().map(|v| v.sqrt().max(1.0));
    const OFFSETS: [f64; 5] = [-3.0, -1.0, 0.0, 1.5, 3.0];
    for dx in OFFSETS {
        for dy in OFFSETS {
            let o = centre + Vec2::new(dx * sd[0], dy * sd[1]);
            let Ok(conditioned) = gauss::condition(&joint, t, 1, o) else {
                return false;
            };
            let Ok(fresh) = predictor.predict(&OvState::new(o, tau + 1), horizon) else {
                return false;
            };
            let mean_gap = (conditioned.mean2() - fresh.mean(t)).abs().max();
            let cov_gap = (conditioned.cov2() - fresh.cov(t)).abs().max();
            if mean_gap > tolerance || cov_gap > tolerance {
                return false;
            }
        }
    }
    true
}
