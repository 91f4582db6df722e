//! Shrinking-horizon MPC for the double-integrator ego vehicle.
//!
//! The state is `(p1, p2, v1, v2)` and the input `(u1, u2)`. At planning step
//! `tau` the planner chooses `u_tau .. u_{T-1}`; the states follow from the
//! forward-Euler dynamics, so the problem is condensed onto the inputs and
//! handed to the dense QP solver. The cost is the squared position deviation
//! from the reference plus a small input penalty that makes the QP strictly
//! convex.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{JointGaussianTrajectory, Vec2};
use crate::qp::{self, DenseQp, QpOutcome, QpSettings};
use crate::safety::{HalfspaceConstraint, MarginTable, RiskAllocation};

pub type State = Vector4<f64>;
pub type Input = Vector2<f64>;

/// Forward-Euler discretization of `d/dt (p, v) = (v, u)`.
pub fn discretize(dt: f64) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let mut a = Matrix4::identity();
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    let mut b = Matrix4x2::zeros();
    b[(2, 0)] = dt;
    b[(3, 1)] = dt;
    (a, b)
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }
}

/// Velocity and acceleration limits of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoLimits {
    pub v1: Interval,
    pub v2: Interval,
    pub u1: Interval,
    pub u2: Interval,
}

impl Default for EgoLimits {
    fn default() -> Self {
        Self {
            v1: Interval::new(0.0, 30.0),
            v2: Interval::new(-5.0, 5.0),
            u1: Interval::new(-10.0, 10.0),
            u2: Interval::new(-5.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub dt: f64,
    pub limits: EgoLimits,
}

impl EgoModel {
    pub fn new(dt: f64, limits: EgoLimits) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("sampling time must be positive, got {dt}")));
        }
        for (name, iv) in [("v1", limits.v1), ("v2", limits.v2), ("u1", limits.u1), ("u2", limits.u2)] {
            if !(iv.lo <= iv.hi) {
                return Err(Error::InvalidParameter(format!("empty {name} interval")));
            }
        }
        let (a, b) = discretize(dt);
        Ok(Self { a, b, dt, limits })
    }

    pub fn step(&self, x: &State, u: &Input) -> State {
        self.a * x + self.b * u
    }
}

fn position(x: &State) -> Vec2 {
    Vec2::new(x[0], x[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Chance constraints of the current prediction only.
    Nominal,
    /// Chance constraints tightened by the recursive-feasibility margins.
    Prf,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Nominal, Variant::Prf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Nominal => "nominal",
            Variant::Prf => "prf",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(Variant::Nominal),
            "prf" => Ok(Variant::Prf),
            other => Err(Error::InvalidParameter(format!("unknown variant {other:?}"))),
        }
    }
}

/// Settings shared by every planning step of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub ego: EgoModel,
    pub safe_radius: f64,
    pub input_weight: f64,
    pub qp: QpSettings,
}

/// One shrinking-horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub tau: usize,
    pub horizon: usize,
    pub x0: State,
    /// Reference positions for `tau + 1 ..= T`.
    pub reference: Vec<Vec2>,
    /// One constraint per timestep `tau + 1 ..= T`.
    pub halfspaces: Vec<HalfspaceConstraint>,
    pub variant: Variant,
    pub ego: EgoModel,
    pub input_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanStatus {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub status: PlanStatus,
    /// Inputs for `tau .. T - 1`; empty when infeasible.
    pub u_seq: Vec<Input>,
    /// States for `tau + 1 ..= T`; empty when infeasible.
    pub x_seq: Vec<State>,
    /// Optimal value of the planning cost, input penalty included.
    pub objective: f64,
    /// Squared position deviation of the plan, without the input penalty.
    pub tracking_cost: f64,
    pub solve_time: f64,
    pub iterations: usize,
}

impl PlanResult {
    pub fn is_feasible(&self) -> bool {
        self.status == PlanStatus::Feasible
    }
}

/// Assembles the problem at planning step `tau`. `reference` holds the
/// reference positions for steps `0 ..= T`.
#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    config: &PlannerConfig,
    tau: usize,
    x0: State,
    prediction: &JointGaussianTrajectory,
    table: &MarginTable,
    alloc: &RiskAllocation,
    reference: &[Vec2],
    variant: Variant,
) -> Result<MpcProblem> {
    let horizon = table.horizon();
    if prediction.horizon() != horizon || alloc.horizon() != horizon {
        return Err(Error::DimensionMismatch(format!(
            "prediction horizon {}, margin table horizon {horizon}, allocation horizon {}",
            prediction.horizon(),
            alloc.horizon()
        )));
    }
    if prediction.origin_step() != tau || tau >= horizon {
        return Err(Error::InvalidStep(format!(
            "prediction made at step {} used for planning step {tau} of {horizon}",
            prediction.origin_step()
        )));
    }
    if reference.len() != horizon + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} reference points for horizon {horizon}",
            reference.len()
        )));
    }
    let gamma_t = alloc.gamma_t();
    let halfspaces = ((tau + 1)..=horizon)
        .map(|t| HalfspaceConstraint {
            t,
            m: table.direction(t),
            r: config.safe_radius,
            gamma_t,
            mu: prediction.mean(t),
            sigma: prediction.cov(t),
            margin: match variant {
                Variant::Nominal => 0.0,
                Variant::Prf => table.cum(t, tau),
            },
        })
        .collect();
    Ok(MpcProblem {
        tau,
        horizon,
        x0,
        reference: reference[(tau + 1)..].to_vec(),
        halfspaces,
        variant,
        ego: config.ego,
        input_weight: config.input_weight,
    })
}

/// Input-to-state maps of the condensed problem: `x_k = phi[k] x0 +
/// sum_j gamma[k][j] u_j` for `k = 1..=N`, stored zero-based.
struct Condensed {
    phi: Vec<Matrix4<f64>>,
    gamma: Vec<Vec<Matrix4x2<f64>>>,
}

impl Condensed {
    fn new(ego: &EgoModel, steps: usize) -> Self {
        let mut powers = vec![Matrix4::identity()];
        for k in 1..=steps {
            powers.push(ego.a * powers[k - 1]);
        }
        let phi = (1..=steps).map(|k| powers[k]).collect();
        let gamma = (1..=steps)
            .map(|k| (0..steps).map(|j| if j < k { powers[k - 1 - j] * ego.b } else { Matrix4x2::zeros() }).collect())
            .collect();
        Self { phi, gamma }
    }

    // Row `sel` (1x4) of x_k as (coefficients on u, constant).
    fn row(&self, k: usize, sel: &nalgebra::RowVector4<f64>, x0: &State) -> (Vec<f64>, f64) {
        let coeffs = self.gamma[k]
            .iter()
            .flat_map(|g| {
                let r = sel * g;
                [r[0], r[1]]
            })
            .collect();
        (coeffs, (sel * self.phi[k] * x0)[0])
    }
}

impl MpcProblem {
    pub fn steps(&self) -> usize {
        self.horizon - self.tau
    }

    fn validate(&self) -> Result<()> {
        let n = self.steps();
        if self.reference.len() != n || self.halfspaces.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} steps with {} reference points and {} halfspaces",
                n,
                self.reference.len(),
                self.halfspaces.len()
            )));
        }
        Ok(())
    }

    /// Condensed QP over the stacked inputs, together with the constant
    /// term of the objective.
    pub fn to_qp(&self) -> Result<(DenseQp, f64)> {
        self.validate()?;
        let n = self.steps();
        let dim = 2 * n;
        let cond = Condensed::new(&self.ego, n);
        let sel_pos = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);

        let mut hessian = DMatrix::identity(dim, dim) * (2.0 * self.input_weight);
        let mut linear = DVector::zeros(dim);
        let mut constant = 0.0;
        for k in 0..n {
            let g = DMatrix::from_fn(2, dim, |r, c| (sel_pos * cond.gamma[k][c / 2])[(r, c % 2)]);
            let free = sel_pos * cond.phi[k] * self.x0 - self.reference[k];
            hessian += 2.0 * g.transpose() * &g;
            linear += 2.0 * g.transpose() * DVector::from_column_slice(free.as_slice());
            constant += free.norm_squared();
        }
        let hessian = 0.5 * (&hessian + hessian.transpose());

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut bounds: Vec<f64> = Vec::new();
        let mut push = |coeffs: Vec<f64>, bound: f64| {
            rows.push(coeffs);
            bounds.push(bound);
        };
        let limits = self.ego.limits;
        for j in 0..n {
            for (axis, iv) in [(0, limits.u1), (1, limits.u2)] {
                let mut e = vec![0.0; dim];
                e[2 * j + axis] = 1.0;
                push(e.clone(), iv.hi);
                push(e.iter().map(|v| -v).collect(), -iv.lo);
            }
        }
        for k in 0..n {
            for (idx, iv) in [(2usize, limits.v1), (3usize, limits.v2)] {
                let mut sel = nalgebra::RowVector4::zeros();
                sel[idx] = 1.0;
                let (coeffs, free) = cond.row(k, &sel, &self.x0);
                push(coeffs.clone(), iv.hi - free);
                push(coeffs.iter().map(|v| -v).collect(), free - iv.lo);
            }
        }
        for (k, h) in self.halfspaces.iter().enumerate() {
            let sel = nalgebra::RowVector4::new(h.m[0], h.m[1], 0.0, 0.0);
            let (coeffs, free) = cond.row(k, &sel, &self.x0);
            push(coeffs, -(free + h.offset()));
        }
        let constraints = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c]);
        Ok((
            DenseQp { hessian, linear, constraints, bounds: DVector::from_vec(bounds) },
            constant,
        ))
    }

    /// Rolls the dynamics forward from `x0`.
    pub fn rollout(&self, inputs: &[Input]) -> Vec<State> {
        let mut x = self.x0;
        inputs
            .iter()
            .map(|u| {
                x = self.ego.step(&x, u);
                x
            })
            .collect()
    }

    pub fn tracking_cost(&self, states: &[State]) -> f64 {
        states
            .iter()
            .zip(&self.reference)
            .map(|(x, r)| (position(x) - r).norm_squared())
            .sum()
    }

    /// Largest violation of the state, input and halfspace constraints.
    pub fn max_violation(&self, inputs: &[Input], states: &[State]) -> f64 {
        let l = self.ego.limits;
        let gap = |iv: Interval, v: f64| (iv.lo - v).max(v - iv.hi).max(0.0);
        let mut worst: f64 = 0.0;
        for u in inputs {
            worst = worst.max(gap(l.u1, u[0])).max(gap(l.u2, u[1]));
        }
        for (x, h) in states.iter().zip(&self.halfspaces) {
            worst = worst.max(gap(l.v1, x[2])).max(gap(l.v2, x[3]));
            worst = worst.max(h.tightened_level(position(x)).max(0.0));
        }
        worst
    }
}

/// Violation accepted on a returned plan, in the units of each constraint.
pub const PLAN_FEASIBILITY_TOL: f64 = 1e-6;

/// Solves the planning problem to global optimality, or reports that it is
/// infeasible.
pub fn solve(problem: &MpcProblem, settings: &QpSettings) -> Result<PlanResult> {
    let start = Instant::now();
    let (qp, constant) = problem.to_qp()?;
    let outcome = qp::solve(&qp, settings)?;
    let solve_time = start.elapsed().as_secs_f64();
    let QpOutcome::Optimal(sol) = outcome else {
        return Ok(PlanResult {
            status: PlanStatus::Infeasible,
            u_seq: Vec::new(),
            x_seq: Vec::new(),
            objective: f64::INFINITY,
            tracking_cost: f64::INFINITY,
            solve_time,
            iterations: 0,
        });
    };
    let u_seq: Vec<Input> = (0..problem.steps()).map(|j| Input::new(sol.x[2 * j], sol.x[2 * j + 1])).collect();
    let x_seq = problem.rollout(&u_seq);
    if problem.max_violation(&u_seq, &x_seq) > PLAN_FEASIBILITY_TOL {
        return Err(Error::SolverFailure { iterations: sol.iterations });
    }
    Ok(PlanResult {
        status: PlanStatus::Feasible,
        tracking_cost: problem.tracking_cost(&x_seq),
        objective: (sol.objective + constant).max(0.0),
        u_seq,
        x_seq,
        solve_time,
        iterations: sol.iterations,
    })
}

/// Phase-1 test: minimum-norm input sequence subject to the same
/// constraints. Agrees with `solve(..).status` without optimizing the cost.
pub fn check_feasible(problem: &MpcProblem, settings: &QpSettings) -> Result<bool> {
    let (mut qp, _) = problem.to_qp()?;
    let n = qp.dim();
    qp.hessian = DMatrix::identity(n, n);
    qp.linear = DVector::zeros(n);
    Ok(qp::solve(&qp, settings)?.is_feasible())
}
