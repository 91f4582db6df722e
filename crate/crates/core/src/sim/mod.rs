//! Closed-loop Monte Carlo lane-change trials.
//!
//! A trial runs the shrinking-horizon loop for `tau = 0 .. T - 1`: observe
//! the obstacle, predict, plan, apply the first input and let the obstacle
//! move. A trial that loses feasibility is frozen at that step; there is no
//! recovery policy.

mod reference;
mod seed;
mod studies;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{JointGaussianTrajectory, Mat2, Vec2};
use crate::planner::{self, EgoLimits, EgoModel, PlanResult, PlannerConfig, State, Variant};
use crate::predictor::{predict, simulate_step, OvModel, OvState};
use crate::qp::QpSettings;
use crate::safety::{build_margin_table, tangent_directions, HalfspaceConstraint, MarginTable, RiskAllocation};

pub use reference::LaneChangeReference;
pub use seed::{splitmix64, trial_seed};
pub use studies::{inclusion_probe, legacy_condition_study, InclusionReport, LegacyRow, PairFrequency};

/// Largest gap tolerated between the covariances reported by the predictor
/// during a trial and those assumed when the margins were built.
pub const COVARIANCE_CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub init: [f64; 2],
    pub nominal_velocity: [f64; 2],
    pub velocity_cov: [[f64; 2]; 2],
}

impl ObstacleConfig {
    pub fn model(&self, dt: f64) -> Result<OvModel> {
        let [[a, b], [c, d]] = self.velocity_cov;
        OvModel::new(Vec2::from(self.nominal_velocity), Mat2::new(a, b, c, d), dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
}

impl From<SolverConfig> for QpSettings {
    fn from(s: SolverConfig) -> Self {
        QpSettings { max_iterations: s.max_iterations, feasibility_tol: s.feasibility_tol }
    }
}

/// Everything needed to reproduce a batch of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub horizon: usize,
    pub dt: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub safe_radius: f64,
    pub input_weight: f64,
    pub ego_init: [f64; 4],
    pub ego_limits: EgoLimits,
    pub reference: LaneChangeReference,
    pub obstacle: ObstacleConfig,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("safe_radius", self.safe_radius)?;
        positive("input_weight", self.input_weight)?;
        positive("solver.feasibility_tol", self.solver.feasibility_tol)?;
        if self.solver.max_iterations == 0 {
            return Err(Error::InvalidParameter("solver.max_iterations must be positive".into()));
        }
        if self.ego_init.iter().chain(&self.obstacle.init).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("initial states must be finite".into()));
        }
        RiskAllocation::new(self.epsilon, self.gamma, self.horizon)?;
        self.reference.validate()?;
        EgoModel::new(self.dt, self.ego_limits)?;
        self.obstacle.model(self.dt)?;
        Ok(())
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self { horizon, ..self.clone() }
    }
}

/// A validated configuration with everything that is shared by its trials:
/// the first prediction, the tangent directions and the margin table.
#[derive(Debug, Clone)]
pub struct Scenario {
    config: TrialConfig,
    ov_model: OvModel,
    planner: PlannerConfig,
    alloc: RiskAllocation,
    reference: Vec<Vec2>,
    joint_at_0: JointGaussianTrajectory,
    table: MarginTable,
}

impl Scenario {
    pub fn new(config: &TrialConfig) -> Result<Self> {
        config.validate()?;
        let ov_model = config.obstacle.model(config.dt)?;
        let ego = EgoModel::new(config.dt, config.ego_limits)?;
        let planner = PlannerConfig {
            ego,
            safe_radius: config.safe_radius,
            input_weight: config.input_weight,
            qp: config.solver.into(),
        };
        let alloc = RiskAllocation::new(config.epsilon, config.gamma, config.horizon)?;
        let reference = config.reference.positions(config.ego_init[0], config.dt, config.horizon);
        let joint_at_0 = predict(&ov_model, &OvState::new(Vec2::from(config.obstacle.init), 0), config.horizon)?;
        let directions = tangent_directions(&reference, &joint_at_0)?;
        let table = build_margin_table(&joint_at_0, &alloc, &directions)?;
        Ok(Self { config: config.clone(), ov_model, planner, alloc, reference, joint_at_0, table })
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn ov_model(&self) -> &OvModel {
        &self.ov_model
    }

    pub fn planner(&self) -> &PlannerConfig {
        &self.planner
    }

    pub fn alloc(&self) -> &RiskAllocation {
        &self.alloc
    }

    /// Reference positions for steps `0..=T`.
    pub fn reference(&self) -> &[Vec2] {
        &self.reference
    }

    pub fn joint_at_0(&self) -> &JointGaussianTrajectory {
        &self.joint_at_0
    }

    pub fn table(&self) -> &MarginTable {
        &self.table
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn check_covariances(&self, prediction: &JointGaussianTrajectory) -> Result<()> {
        let tau = prediction.origin_step();
        for t in prediction.steps() {
            let deviation = (prediction.cov(t) - self.table.expected_cov(t, tau)).amax();
            if deviation > COVARIANCE_CONSISTENCY_TOL {
                return Err(Error::CovarianceMismatch { t, tau, deviation });
            }
        }
        Ok(())
    }

    /// Runs one closed-loop trial with its own random stream.
    pub fn run_trial(&self, variant: Variant, trial_index: u64, seed: u64) -> Result<TrialResult> {
        let horizon = self.horizon();
        let ego = &self.planner.ego;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = State::from(self.config.ego_init);
        let mut ov = OvState::new(Vec2::from(self.config.obstacle.init), 0);
        let mut d_min = (Vec2::new(x[0], x[1]) - ov.position).norm();
        let mut cost = 0.0;
        let mut max_solve_time: f64 = 0.0;
        let mut steps = Vec::with_capacity(horizon);
        let mut status = TrialStatus::Completed;

        for tau in 0..horizon {
            let prediction = if tau == 0 {
                self.joint_at_0.clone()
            } else {
                let p = predict(&self.ov_model, &ov, horizon)?;
                self.check_covariances(&p)?;
                p
            };
            let problem = planner::build_problem(
                &self.planner,
                tau,
                x,
                &prediction,
                &self.table,
                &self.alloc,
                &self.reference,
                variant,
            )?;
            let plan = planner::solve(&problem, &self.planner.qp)?;
            max_solve_time = max_solve_time.max(plan.solve_time);
            let feasible = plan.is_feasible();
            let u = plan.u_seq.first().copied();
            steps.push(StepRecord { tau, ego: x, obstacle: ov.position, halfspaces: problem.halfspaces, plan });
            let Some(u) = u.filter(|_| feasible) else {
                status = if tau == 0 { TrialStatus::InitiallyInfeasible } else { TrialStatus::LostFeasibility };
                break;
            };
            x = ego.step(&x, &u);
            ov = simulate_step(&self.ov_model, &ov, &mut rng);
            let p = Vec2::new(x[0], x[1]);
            cost += (p - self.reference[tau + 1]).norm_squared();
            d_min = d_min.min((p - ov.position).norm());
        }

        Ok(TrialResult {
            trial_index,
            variant,
            seed,
            status,
            cost,
            d_min,
            max_solve_time,
            steps,
            error: None,
        })
    }
}

/// How a trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    /// Feasible at every planning step.
    Completed,
    InitiallyInfeasible,
    /// Feasible at the first step, infeasible later.
    LostFeasibility,
    /// The solver or a consistency check failed; not an infeasibility.
    SolverFailure,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Completed => "completed",
            TrialStatus::InitiallyInfeasible => "initially_infeasible",
            TrialStatus::LostFeasibility => "lost_feasibility",
            TrialStatus::SolverFailure => "solver_failure",
        }
    }
}

/// One planning step of a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub tau: usize,
    /// Ego state the problem was solved from.
    pub ego: State,
    /// Observed obstacle position.
    pub obstacle: Vec2,
    pub halfspaces: Vec<HalfspaceConstraint>,
    pub plan: PlanResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_index: u64,
    pub variant: Variant,
    pub seed: u64,
    pub status: TrialStatus,
    /// Sum of squared position deviations over the executed steps.
    pub cost: f64,
    /// Smallest ego-obstacle distance over the executed steps, start included.
    pub d_min: f64,
    pub max_solve_time: f64,
    pub steps: Vec<StepRecord>,
    pub error: Option<Error>,
}

impl TrialResult {
    fn failed(trial_index: u64, variant: Variant, seed: u64, error: Error) -> Self {
        Self {
            trial_index,
            variant,
            seed,
            status: TrialStatus::SolverFailure,
            cost: f64::NAN,
            d_min: f64::NAN,
            max_solve_time: f64::NAN,
            steps: Vec::new(),
            error: Some(error),
        }
    }

    pub fn initially_feasible(&self) -> bool {
        matches!(self.status, TrialStatus::Completed | TrialStatus::LostFeasibility)
    }

    /// Recursive feasibility; `None` unless the first problem was feasible.
    pub fn rf_ok(&self) -> Option<bool> {
        self.initially_feasible().then_some(self.status == TrialStatus::Completed)
    }

    pub fn collided(&self, safe_radius: f64) -> bool {
        self.d_min < safe_radius
    }
}

/// Batch statistics for one variant. Rates carry their denominator in the
/// name: `_feasible` rates are over initially feasible trials, `_all` rates
/// over every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub variant: Variant,
    pub n_trials: usize,
    pub n_initially_feasible: usize,
    pub n_rf_ok: usize,
    pub n_solver_failures: usize,
    /// `n_rf_ok / n_initially_feasible`.
    pub rf_rate: f64,
    /// `n_rf_ok / n_trials`.
    pub rf_rate_all: f64,
    pub initial_feasibility_rate: f64,
    /// Mean closed-loop cost over recursively feasible trials.
    pub mean_cost: f64,
    /// Mean cost over initially feasible trials, frozen ones included.
    pub mean_cost_feasible: f64,
    /// Mean d_min over initially feasible trials.
    pub mean_d_min: f64,
    pub mean_max_solve_time: f64,
    /// Fraction of initially feasible trials with d_min below the safe radius.
    pub collision_rate: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

impl AggregateMetrics {
    /// Folds trial results in the given order.
    pub fn from_trials(variant: Variant, trials: &[TrialResult], safe_radius: f64) -> Self {
        let feasible: Vec<&TrialResult> = trials.iter().filter(|r| r.initially_feasible()).collect();
        let n_rf_ok = feasible.iter().filter(|r| r.rf_ok() == Some(true)).count();
        let n_collisions = feasible.iter().filter(|r| r.collided(safe_radius)).count();
        let solved = trials.iter().filter(|r| r.status != TrialStatus::SolverFailure);
        Self {
            variant,
            n_trials: trials.len(),
            n_initially_feasible: feasible.len(),
            n_rf_ok,
            n_solver_failures: trials.iter().filter(|r| r.status == TrialStatus::SolverFailure).count(),
            rf_rate: ratio(n_rf_ok, feasible.len()),
            rf_rate_all: ratio(n_rf_ok, trials.len()),
            initial_feasibility_rate: ratio(feasible.len(), trials.len()),
            mean_cost: mean(feasible.iter().filter(|r| r.rf_ok() == Some(true)).map(|r| r.cost)),
            mean_cost_feasible: mean(feasible.iter().map(|r| r.cost)),
            mean_d_min: mean(feasible.iter().map(|r| r.d_min)),
            mean_max_solve_time: mean(solved.map(|r| r.max_solve_time)),
            collision_rate: ratio(n_collisions, feasible.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub trials: Vec<TrialResult>,
    pub metrics: AggregateMetrics,
}

/// Trial `0` of a batch: `cfg.seed` is the base seed.
pub fn run_trial(config: &TrialConfig, variant: Variant) -> Result<TrialResult> {
    Scenario::new(config)?.run_trial(variant, 0, trial_seed(config.seed, 0))
}

/// Runs `n_trials` trials on `threads` worker threads (`0` picks the
/// default). Results are collected in trial order and do not depend on the
/// number of threads. Trials whose solver fails are kept with status
/// `SolverFailure`.
pub fn run_batch(scenario: &Scenario, n_trials: usize, variant: Variant, threads: usize) -> Result<BatchResult> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("a batch needs at least one trial".into()));
    }
    let base = scenario.config.seed;
    let work = || -> Vec<TrialResult> {
        (0..n_trials as u64)
            .into_par_iter()
            .map(|i| {
                let seed = trial_seed(base, i);
                scenario.run_trial(variant, i, seed).unwrap_or_else(|e| TrialResult::failed(i, variant, seed, e))
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let trials = pool.install(work);
    let metrics = AggregateMetrics::from_trials(variant, &trials, scenario.config.safe_radius);
    Ok(BatchResult { trials, metrics })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn benign_config() -> TrialConfig {
        TrialConfig {
            horizon: 9,
            dt: 0.5,
            epsilon: 0.05,
            gamma: 0.1,
            safe_radius: 4.0,
            input_weight: 1e-4,
            ego_init: [0.0, 0.0, 15.0, 0.0],
            ego_limits: EgoLimits::default(),
            reference: LaneChangeReference {
                speed: 15.0,
                lateral_start: 0.0,
                lateral_end: 3.5,
                station_start: 15.0,
                station_end: 45.0,
            },
            obstacle: ObstacleConfig {
                init: [-60.0, 12.0],
                nominal_velocity: [15.0, 0.0],
                velocity_cov: [[0.0, 0.0], [0.0, 0.0]],
            },
            solver: SolverConfig { max_iterations: 20_000, feasibility_tol: 1e-9 },
            seed: 3,
        }
    }

    // Wall-clock fields are the only nondeterministic parts of a result.
    pub(crate) fn untimed(r: &TrialResult) -> TrialResult {
        let mut r = r.clone();
        r.max_solve_time = 0.0;
        for s in &mut r.steps {
            s.plan.solve_time = 0.0;
        }
        r
    }

    #[test]
    fn benign_deterministic_trial_completes() {
        for variant in Variant::ALL {
            let r = run_trial(&benign_config(), variant).unwrap();
            assert_eq!(r.status, TrialStatus::Completed, "{variant}");
            assert_eq!(r.rf_ok(), Some(true));
            assert_eq!(r.steps.len(), 9);
            assert!(r.steps.iter().all(|s| s.plan.is_feasible()));
            assert!(r.d_min > 4.0);
        }
    }

    #[test]
    fn zero_noise_table_is_all_zero() {
        let s = Scenario::new(&benign_config()).unwrap();
        for t in 2..=9 {
            assert_eq!(s.table().cum(t, 0), 0.0);
        }
    }

    #[test]
    fn single_trial_batch_matches_run_trial() {
        let mut cfg = benign_config();
        cfg.obstacle.velocity_cov = [[1.0, 0.0], [0.0, 0.25]];
        let single = run_trial(&cfg, Variant::Prf).unwrap();
        let batch = run_batch(&Scenario::new(&cfg).unwrap(), 1, Variant::Prf, 1).unwrap();
        assert_eq!(untimed(&batch.trials[0]), untimed(&single));
        assert_eq!(batch.metrics.n_trials, 1);
        assert_eq!(batch.metrics.rf_rate, if single.rf_ok() == Some(true) { 1.0 } else { 0.0 });
        assert_eq!(batch.metrics.mean_d_min, single.d_min);
    }

    #[test]
    fn unreachable_start_is_initially_infeasible() {
        let mut cfg = benign_config();
        // Obstacle sitting on the ego's first reachable position.
        cfg.obstacle.init = [7.5, 0.5];
        cfg.obstacle.nominal_velocity = [0.0, 0.0];
        let r = run_trial(&cfg, Variant::Nominal).unwrap();
        assert_eq!(r.status, TrialStatus::InitiallyInfeasible);
        assert_eq!(r.rf_ok(), None);
        assert_eq!(r.steps.len(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = benign_config();
        cfg.epsilon = 1.0;
        assert!(Scenario::new(&cfg).is_err());
        let mut cfg = benign_config();
        cfg.dt = 0.0;
        assert!(Scenario::new(&cfg).is_err());
        let mut cfg = benign_config();
        cfg.obstacle.velocity_cov = [[1.0, 0.0], [0.0, -1.0]];
        assert!(Scenario::new(&cfg).is_err());
        assert!(run_batch(&Scenario::new(&benign_config()).unwrap(), 0, Variant::Prf, 1).is_err());
    }

    #[test]
    fn batch_is_independent_of_thread_count() {
        let mut cfg = benign_config();
        cfg.obstacle.init = [-6.0, 3.5];
        cfg.obstacle.velocity_cov = [[1.0, 0.0], [0.0, 0.25]];
        let s = Scenario::new(&cfg).unwrap();
        let a = run_batch(&s, 24, Variant::Nominal, 1).unwrap();
        let b = run_batch(&s, 24, Variant::Nominal, 4).unwrap();
        let (mut ma, mut mb) = (a.metrics.clone(), b.metrics.clone());
        ma.mean_max_solve_time = 0.0;
        mb.mean_max_solve_time = 0.0;
        assert_eq!(ma, mb);
        for (x, y) in a.trials.iter().zip(&b.trials) {
            assert_eq!(untimed(x), untimed(y));
        }
    }
}
