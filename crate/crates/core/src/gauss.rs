//! Multivariate Gaussian algebra.
//!
//! Everything downstream (the predictor, the tightening margins, the Monte
//! Carlo studies) reduces to three questions about a jointly Gaussian
//! obstacle trajectory: what is the marginal at a step, what is the
//! conditional at a step given the position at an earlier step, and how is
//! the conditional mean itself distributed before that earlier position is
//! revealed. This module answers them with the projection formulas for
//! Gaussian conditioning, and supplies the standard-normal quantile used to
//! turn chance constraints into deterministic ones.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Componentwise symmetry tolerance for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalue floor below which a covariance is declared indefinite.
pub const PSD_FLOOR: f64 = -1e-10;
/// Conditioning blocks whose smallest eigenvalue falls in `(0, REGULARIZATION]`
/// are shifted by `REGULARIZATION * I` before inversion.
pub const REGULARIZATION: f64 = 1e-12;

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidParameter(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    let min = min_eigenvalue(m);
    if min < PSD_FLOOR {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    Ok(())
}

/// A multivariate normal distribution with a validated covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    // cov = factor * factor^T; built from the eigendecomposition so that
    // semidefinite (including zero) covariances sample exactly.
    factor: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&cov)?;
        if mean.len() != cov.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let eig = SymmetricEigen::new(cov.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < PSD_FLOOR {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
        }
        let scales = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = eig.eigenvectors * DMatrix::from_diagonal(&scales);
        Ok(Self { mean, cov, factor })
    }

    pub fn new_2d(mean: Vec2, cov: Mat2) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(mean.as_slice()),
            DMatrix::from_column_slice(2, 2, cov.as_slice()),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// The mean as a planar vector. Panics if the distribution is not 2-D.
    pub fn mean2(&self) -> Vec2 {
        assert_eq!(self.dim(), 2, "mean2 on a {}-D Gaussian", self.dim());
        Vec2::new(self.mean[0], self.mean[1])
    }

    /// The covariance as a 2x2 matrix. Panics if the distribution is not 2-D.
    pub fn cov2(&self) -> Mat2 {
        assert_eq!(self.dim(), 2, "cov2 on a {}-D Gaussian", self.dim());
        Mat2::new(self.cov[(0, 0)], self.cov[(0, 1)], self.cov[(1, 0)], self.cov[(1, 1)])
    }

    /// Draws one sample. Deterministic for a fixed state of `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// Draws one sample from `g`.
pub fn sample<R: Rng + ?Sized>(g: &Gaussian, rng: &mut R) -> DVector<f64> {
    g.sample(rng)
}

/// Jointly Gaussian planar positions predicted at `origin_step` for the
/// steps `origin_step + 1 ..= horizon`.
///
/// The stacked covariance is stored whole; per-step covariances and
/// cross-covariances are views into it, so `cross(t, t) == cov(t)` and
/// `cross(t1, t2) == cross(t2, t1)^T` hold by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussianTrajectory {
    origin_step: usize,
    horizon: usize,
    means: Vec<Vec2>,
    stacked_cov: DMatrix<f64>,
}

impl JointGaussianTrajectory {
    pub fn new(
        origin_step: usize,
        horizon: usize,
        means: Vec<Vec2>,
        stacked_cov: DMatrix<f64>,
    ) -> Result<Self> {
        if horizon <= origin_step {
            return Err(Error::EmptyHorizon { step: origin_step, horizon });
        }
        let n = horizon - origin_step;
        if means.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} means for {n} steps",
                means.len()
            )));
        }
        if stacked_cov.nrows() != 2 * n || stacked_cov.ncols() != 2 * n {
            return Err(Error::DimensionMismatch(format!(
                "stacked covariance is {}x{}, expected {}x{}",
                stacked_cov.nrows(),
                stacked_cov.ncols(),
                2 * n,
                2 * n
            )));
        }
        check_symmetric(&stacked_cov)?;
        check_psd(&stacked_cov)?;
        Ok(Self { origin_step, horizon, means, stacked_cov })
    }

    pub fn origin_step(&self) -> usize {
        self.origin_step
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of predicted steps.
    pub fn len(&self) -> usize {
        self.horizon - self.origin_step
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> std::ops::RangeInclusive<usize> {
        (self.origin_step + 1)..=self.horizon
    }

    pub fn stacked_cov(&self) -> &DMatrix<f64> {
        &self.stacked_cov
    }

    fn index(&self, t: usize) -> usize {
        assert!(
            t > self.origin_step && t <= self.horizon,
            "step {t} outside prediction window {}..={}",
            self.origin_step + 1,
            self.horizon
        );
        t - self.origin_step - 1
    }

    pub fn mean(&self, t: usize) -> Vec2 {
        self.means[self.index(t)]
    }

    pub fn cov(&self, t: usize) -> Mat2 {
        self.cross(t, t)
    }

    /// Cross-covariance `Cov(O_t1, O_t2)`.
    pub fn cross(&self, t1: usize, t2: usize) -> Mat2 {
        let (i, j) = (2 * self.index(t1), 2 * self.index(t2));
        let s = &self.stacked_cov;
        Mat2::new(s[(i, j)], s[(i, j + 1)], s[(i + 1, j)], s[(i + 1, j + 1)])
    }

    pub fn marginal(&self, t: usize) -> Result<Gaussian> {
        Gaussian::new_2d(self.mean(t), self.cov(t))
    }

    /// The joint over `step + 1 ..= horizon` after observing the position at
    /// `step`. With `value = None` the observation is taken at its mean,
    /// which is enough when only the (value independent) covariances matter.
    pub fn conditioned_on(&self, step: usize, value: Option<Vec2>) -> Result<Self> {
        if step <= self.origin_step || step >= self.horizon {
            return Err(Error::InvalidStep(format!(
                "cannot condition on step {step} of a prediction spanning {}..={}",
                self.origin_step + 1,
                self.horizon
            )));
        }
        let gain_inv = ConditioningInverse::new(self, step)?;
        let innovation = value.map_or(Vec2::zeros(), |v| v - self.mean(step));
        let rest: Vec<usize> = ((step + 1)..=self.horizon).collect();
        let means = rest
            .iter()
            .map(|&t| self.mean(t) + self.cross(t, step) * gain_inv.apply(&innovation))
            .collect();
        let n = rest.len();
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        for (a, &t1) in rest.iter().enumerate() {
            let left = self.cross(t1, step) * gain_inv.matrix;
            for (b, &t2) in rest.iter().enumerate().skip(a) {
                let block = self.cross(t1, t2) - left * self.cross(step, t2);
                cov.fixed_view_mut::<2, 2>(2 * a, 2 * b).copy_from(&block);
                if a != b {
                    cov.fixed_view_mut::<2, 2>(2 * b, 2 * a).copy_from(&block.transpose());
                } else {
                    let sym = 0.5 * (block + block.transpose());
                    cov.fixed_view_mut::<2, 2>(2 * a, 2 * a).copy_from(&sym);
                }
            }
        }
        Self::new(step, self.horizon, means, cov)
    }
}

/// Inverse of a conditioning block `Sigma_s`, with the singular cases
/// resolved as follows: eigenvalues in `(0, REGULARIZATION]` are lifted by
/// `REGULARIZATION`; an exactly singular block is pseudo-inverted provided no
/// cross-covariance reaches into its null space, since such directions carry
/// no information. Anything else is a singular conditioning problem.
struct ConditioningInverse {
    matrix: Mat2,
}

impl ConditioningInverse {
    fn new(joint: &JointGaussianTrajectory, step: usize) -> Result<Self> {
        let block = joint.cov(step);
        let eig = block.symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min > REGULARIZATION {
            return Ok(Self { matrix: invert_2x2(&block) });
        }
        if min > 0.0 {
            let lifted = block + Mat2::identity() * REGULARIZATION;
            return Ok(Self { matrix: invert_2x2(&lifted) });
        }
        let mut pinv = Mat2::zeros();
        for k in 0..2 {
            let v = eig.eigenvectors.column(k).into_owned();
            let l = eig.eigenvalues[k];
            if l > REGULARIZATION {
                pinv += v * v.transpose() / l;
            } else {
                for t in joint.steps().filter(|&t| t != step) {
                    if (joint.cross(t, step) * v).norm() > REGULARIZATION {
                        return Err(Error::SingularCovariance { step });
                    }
                }
            }
        }
        Ok(Self { matrix: pinv })
    }

    fn apply(&self, v: &Vec2) -> Vec2 {
        self.matrix * v
    }
}

fn invert_2x2(m: &Mat2) -> Mat2 {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
}

fn check_conditioning_steps(joint: &JointGaussianTrajectory, t: usize, a: usize) -> Result<()> {
    let tau = joint.origin_step();
    if a == 0 || tau + a >= t || t > joint.horizon() {
        return Err(Error::InvalidStep(format!(
            "need {tau} < {tau} + a < t <= {}, got a = {a}, t = {t}",
            joint.horizon()
        )));
    }
    Ok(())
}

/// Distribution of the position at `t` given that the position at
/// `origin + a` equals `value`.
pub fn condition(joint: &JointGaussianTrajectory, t: usize, a: usize, value: Vec2) -> Result<Gaussian> {
    check_conditioning_steps(joint, t, a)?;
    let s = joint.origin_step() + a;
    let inv = ConditioningInverse::new(joint, s)?;
    let gain = joint.cross(t, s) * inv.matrix;
    let mean = joint.mean(t) + gain * (value - joint.mean(s));
    let cov = joint.cov(t) - gain * joint.cross(s, t);
    Gaussian::new_2d(mean, symmetrize(cov))
}

/// Distribution of the conditional mean `E[O_t | O_{origin+a}]` viewed as a
/// random variable before the position at `origin + a` is revealed.
pub fn conditional_mean_distribution(joint: &JointGaussianTrajectory, t: usize, a: usize) -> Result<Gaussian> {
    check_conditioning_steps(joint, t, a)?;
    let s = joint.origin_step() + a;
    let inv = ConditioningInverse::new(joint, s)?;
    let cov = joint.cross(t, s) * inv.matrix * joint.cross(s, t);
    Gaussian::new_2d(joint.mean(t), symmetrize(cov))
}

fn symmetrize(m: Mat2) -> Mat2 {
    0.5 * (m + m.transpose())
}

/// Standard normal cumulative distribution function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation (relative error about 1.2e-9) followed by
/// one Halley step against the erfc-based CDF. Upper-tail arguments are
/// reflected so the refinement always works on the accurate side.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityDomain(p));
    }
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

// p in (0, 0.5]
fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    if x == 0.0 {
        return 0.0;
    }
    let e = std_normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}
