//! Dense strictly convex quadratic programming.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x^T H x + f^T x
//! subject to  C x <= d
//! ```
//!
//! with `H` positive definite, using the Goldfarb-Idnani dual active-set
//! method. Starting from the unconstrained minimizer, the method repeatedly
//! picks a violated constraint and moves along the primal/dual direction
//! that satisfies it while keeping the active multipliers non-negative,
//! dropping constraints whose multiplier reaches zero. The factorization
//! `J^T N = [R; 0]` of the active normals `N` (with `J J^T = H^{-1}`) is
//! updated with Givens rotations. A violated constraint that cannot be
//! reached by any primal step and admits no dual step certifies
//! infeasibility.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Problem data in `C x <= d` form.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Cap on active-set changes.
    pub max_iterations: usize,
    /// Largest accepted violation, measured as `(C_i x - d_i) / max(|C_i|, 1)`.
    pub feasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iterations: 20_000, feasibility_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One non-negative multiplier per constraint row.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpOutcome {
    Optimal(QpSolution),
    Infeasible,
}

impl QpOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Self::Optimal(_))
    }
}

impl DenseQp {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest scaled violation of `C x <= d` at `x`, zero when feasible.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let slack = &self.bounds - &self.constraints * x;
        (0..self.bounds.len())
            .map(|i| -slack[i] / self.constraints.row(i).norm().max(1.0))
            .fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "Hessian is {}x{} for {n} variables",
                self.hessian.nrows(),
                self.hessian.ncols()
            )));
        }
        if self.constraints.ncols() != n || self.constraints.nrows() != self.bounds.len() {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrix is {}x{} with {} bounds",
                self.constraints.nrows(),
                self.constraints.ncols(),
                self.bounds.len()
            )));
        }
        Ok(())
    }
}

struct ActiveSet {
    n: usize,
    // J J^T = H^{-1}; columns [0, q) span the active normals.
    j: DMatrix<f64>,
    // Upper-triangular q x q block in the top-left corner.
    r: DMatrix<f64>,
    rows: Vec<usize>,
    duals: Vec<f64>,
}

impl ActiveSet {
    fn q(&self) -> usize {
        self.rows.len()
    }

    fn directions(&self, normal: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let q = self.q();
        let d = self.j.tr_mul(normal);
        let z = self.j.columns(q, self.n - q) * d.rows(q, self.n - q);
        let mut r = DVector::zeros(q);
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in (i + 1)..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        (d, z, r)
    }

    fn rotate_columns(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let (ja, jb) = (self.j[(row, a)], self.j[(row, b)]);
            self.j[(row, a)] = c * ja + s * jb;
            self.j[(row, b)] = -s * ja + c * jb;
        }
    }

    fn add(&mut self, row: usize, dual: f64, mut d: DVector<f64>) {
        let q = self.q();
        for i in ((q + 1)..self.n).rev() {
            let (a, b) = (d[i - 1], d[i]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[i - 1] = h;
            d[i] = 0.0;
            self.rotate_columns(i - 1, i, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.rows.push(row);
        self.duals.push(dual);
    }

    fn drop(&mut self, k: usize) {
        let q = self.q();
        for col in k..(q - 1) {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for col in k..(q - 1) {
            let (a, b) = (self.r[(col, col)], self.r[(col + 1, col)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for cc in col..(q - 1) {
                let (ra, rb) = (self.r[(col, cc)], self.r[(col + 1, cc)]);
                self.r[(col, cc)] = c * ra + s * rb;
                self.r[(col + 1, cc)] = -s * ra + c * rb;
            }
            self.r[(col + 1, col)] = 0.0;
            self.rotate_columns(col, col + 1, c, s);
        }
        self.rows.remove(k);
        self.duals.remove(k);
    }
}

/// Solves `qp`. Returns [`QpOutcome::Infeasible`] when no point satisfies the
/// constraints, and [`Error::SolverFailure`] if the iteration cap is hit.
pub fn solve(qp: &DenseQp, settings: &QpSettings) -> Result<QpOutcome> {
    qp.validate()?;
    let n = qp.dim();
    let m = qp.bounds.len();
    let chol = qp
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("Hessian is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::InvalidParameter("singular Cholesky factor".into()))?;
    let mut active = ActiveSet {
        n,
        j: l_inv.transpose(),
        r: DMatrix::zeros(n, n),
        rows: Vec::new(),
        duals: Vec::new(),
    };
    let mut x = -chol.solve(&qp.linear);
    let scale: Vec<f64> = (0..m).map(|i| qp.constraints.row(i).norm()).collect();
    let tol = settings.feasibility_tol;
    let mut iterations = 0usize;

    loop {
        // Most violated constraint, in scaled units.
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            let slack = qp.bounds[i] - qp.constraints.row(i).dot(&x.transpose());
            let violation = -slack / scale[i].max(1.0);
            if violation <= tol {
                continue;
            }
            if scale[i] == 0.0 {
                return Ok(QpOutcome::Infeasible);
            }
            if active.rows.contains(&i) {
                continue;
            }
            if worst.is_none_or(|(_, v)| violation > v) {
                worst = Some((i, violation));
            }
        }
        let Some((p, _)) = worst else {
            let mut multipliers = DVector::zeros(m);
            for (&row, &u) in active.rows.iter().zip(&active.duals) {
                multipliers[row] = u;
            }
            let objective = qp.objective(&x);
            return Ok(QpOutcome::Optimal(QpSolution { x, multipliers, objective, iterations }));
        };

        // G-I works with n^T x >= b; for C_p x <= d_p that is n = -C_p.
        let normal: DVector<f64> = -qp.constraints.row(p).transpose();
        let target = -qp.bounds[p];
        let mut dual_p = 0.0;
        loop {
            iterations += 1;
            if iterations > settings.max_iterations {
                return Err(Error::SolverFailure { iterations: settings.max_iterations });
            }
            let (d, z, r) = active.directions(&normal);
            let d_norm = d.norm();
            let tail_norm = d.rows(active.q(), n - active.q()).norm();

            let mut partial: Option<(usize, f64)> = None;
            for (k, (&rk, &uk)) in r.iter().zip(&active.duals).enumerate() {
                if rk > 0.0 {
                    let ratio = uk / rk;
                    if partial.is_none_or(|(_, best)| ratio < best) {
                        partial = Some((k, ratio));
                    }
                }
            }
            let full = if tail_norm > 1e-10 * d_norm {
                let gap = target - normal.dot(&x);
                Some(gap.max(0.0) / z.dot(&normal))
            } else {
                None
            };

            match (partial, full) {
                (None, None) => return Ok(QpOutcome::Infeasible),
                (Some((k, step)), None) => {
                    for (u, rk) in active.duals.iter_mut().zip(r.iter()) {
                        *u -= step * rk;
                    }
                    dual_p += step;
                    active.drop(k);
                }
                (partial, Some(full_step)) => {
                    let step = partial.map_or(full_step, |(_, s)| s.min(full_step));
                    x += &z * step;
                    for (u, rk) in active.duals.iter_mut().zip(r.iter()) {
                        *u -= step * rk;
                    }
                    dual_p += step;
                    match partial {
                        Some((k, s)) if s < full_step => active.drop(k),
                        _ => {
                            active.add(p, dual_p, d);
                            break;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qp(h: &[f64], f: &[f64], c: &[f64], d: &[f64]) -> DenseQp {
        let n = f.len();
        DenseQp {
            hessian: DMatrix::from_row_slice(n, n, h),
            linear: DVector::from_column_slice(f),
            constraints: DMatrix::from_row_slice(d.len(), n, c),
            bounds: DVector::from_column_slice(d),
        }
    }

    fn optimal(outcome: QpOutcome) -> QpSolution {
        match outcome {
            QpOutcome::Optimal(s) => s,
            QpOutcome::Infeasible => panic!("unexpectedly infeasible"),
        }
    }

    #[test]
    fn unconstrained_minimizer() {
        let p = qp(&[2.0, 0.0, 0.0, 4.0], &[-2.0, -4.0], &[], &[]);
        let s = optimal(solve(&p, &QpSettings::default()).unwrap());
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn box_constrained() {
        // min (x-2)^2 + (y+3)^2 on [0,1]^2
        let p = qp(
            &[2.0, 0.0, 0.0, 2.0],
            &[-4.0, 6.0],
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
            &[1.0, 0.0, 1.0, 0.0],
        );
        let s = optimal(solve(&p, &QpSettings::default()).unwrap());
        assert!((s.x[0] - 1.0).abs() < 1e-12 && s.x[1].abs() < 1e-12);
        assert!((s.multipliers[0] - 2.0).abs() < 1e-12);
        assert!((s.multipliers[3] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let p = qp(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], &[1.0, 1.0, -1.0, -1.0], &[1.0, -2.0]);
        assert_eq!(solve(&p, &QpSettings::default()).unwrap(), QpOutcome::Infeasible);
    }

    #[test]
    fn violated_constant_row_is_infeasible() {
        let p = qp(&[1.0], &[0.0], &[0.0], &[-1.0]);
        assert_eq!(solve(&p, &QpSettings::default()).unwrap(), QpOutcome::Infeasible);
        let p = qp(&[1.0], &[0.0], &[0.0], &[1.0]);
        assert!(solve(&p, &QpSettings::default()).unwrap().is_feasible());
    }

    #[test]
    fn requires_drops_along_the_way() {
        // Classic example from the quadprog documentation.
        let p = DenseQp {
            hessian: DMatrix::identity(3, 3),
            linear: DVector::from_column_slice(&[0.0, -5.0, 0.0]),
            constraints: -DMatrix::from_row_slice(3, 3, &[-4.0, -3.0, 0.0, 2.0, 1.0, 0.0, 0.0, -2.0, 1.0]),
            bounds: -DVector::from_column_slice(&[-8.0, 2.0, 0.0]),
        };
        let s = optimal(solve(&p, &QpSettings::default()).unwrap());
        let expected = [0.4761905, 1.0476190, 2.0952381];
        for k in 0..3 {
            assert!((s.x[k] - expected[k]).abs() < 1e-6, "{}", s.x);
        }
    }

    #[test]
    fn non_convex_hessian_is_rejected() {
        let p = qp(&[1.0, 0.0, 0.0, -1.0], &[0.0, 0.0], &[], &[]);
        assert!(solve(&p, &QpSettings::default()).is_err());
    }

    #[test]
    fn iteration_cap_is_a_solver_failure() {
        let p = qp(&[1.0, 0.0, 0.0, 1.0], &[-5.0, -5.0], &[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0]);
        let settings = QpSettings { max_iterations: 1, ..QpSettings::default() };
        assert_eq!(solve(&p, &settings), Err(Error::SolverFailure { iterations: 1 }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_qp(vals: &[f64], n: usize, m: usize) -> DenseQp {
            let a = DMatrix::from_row_slice(n, n, &vals[..n * n]);
            let hessian = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
            let hessian = 0.5 * (&hessian + hessian.transpose());
            let linear = DVector::from_column_slice(&vals[n * n..n * n + n]);
            let constraints = DMatrix::from_row_slice(m, n, &vals[n * n + n..n * n + n + m * n]);
            // Feasible by construction: the origin has slack 1.
            let bounds = DVector::from_element(m, 1.0);
            DenseQp { hessian, linear: linear * 5.0, constraints, bounds }
        }

        proptest! {
            #[test]
            fn kkt_conditions_hold(vals in proptest::collection::vec(-2.0f64..2.0, 4 * 4 + 4 + 10 * 4)) {
                let p = random_qp(&vals, 4, 10);
                let s = optimal(solve(&p, &QpSettings::default()).unwrap());
                let grad = &p.hessian * &s.x + &p.linear + p.constraints.transpose() * &s.multipliers;
                prop_assert!(grad.amax() < 1e-8);
                prop_assert!(p.max_violation(&s.x) < 1e-9);
                let slack = &p.bounds - &p.constraints * &s.x;
                for i in 0..slack.len() {
                    prop_assert!(s.multipliers[i] >= 0.0);
                    prop_assert!((s.multipliers[i] * slack[i]).abs() < 1e-8);
                }
            }
        }
    }
}
