//! Dense linear algebra behind every evidence-maximization step: the
//! regression problem container, the weighted-ℓ¹ least-squares solvers and
//! the Gaussian posterior of the coefficients.
//!
//! All heavy computations run on a column-equilibrated copy of the design
//! (each live column scaled to unit norm). The scaling is an exact change of
//! variables for every quantity exposed here, and it keeps the Gram matrix of
//! polynomial libraries with wildly different column magnitudes usable.

mod evidence;
mod lasso;

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, SparseArdError};
use crate::scalar::{cast, Real};

pub(crate) use evidence::{evidence, EvidenceRequest};
pub(crate) use lasso::{lasso_gram, GramLasso};
pub use lasso::{
    rescale_to_standard_lasso, solve_weighted_lasso, solve_weighted_lasso_with, LassoMethod, LassoOptions, RescaleMode,
    RescaledLasso, WeightedLassoSolution,
};

/// Design matrix, targets and noise variance of `y = Θξ + ν`, `ν ~ N(0, σ²I)`.
#[derive(Debug, Clone)]
pub struct RegressionProblem<T: Real> {
    theta: DMatrix<T>,
    y: DVector<T>,
    sigma2: T,
    rho: DVector<T>,
    normalized: OnceLock<Arc<Normalized<T>>>,
}

/// Column-equilibrated view of a problem. `scale[i] = 1/‖Θ_i‖` for live
/// columns and zero for identically-zero ones.
#[derive(Debug)]
pub(crate) struct Normalized<T: Real> {
    pub scale: DVector<T>,
    pub theta: DMatrix<T>,
    pub y: DVector<T>,
    pub gram: DMatrix<T>,
    pub xty: DVector<T>,
    pub yy: T,
}

impl<T: Real> Normalized<T> {
    pub fn is_live(&self, i: usize) -> bool {
        self.scale[i] > T::zero()
    }

    fn build(theta: &DMatrix<T>, y: &DVector<T>, rho: &DVector<T>) -> Self {
        let scale = rho.map(|r| if r > T::zero() { T::one() / r.sqrt() } else { T::zero() });
        let mut theta_n = theta.clone();
        for (j, mut col) in theta_n.column_iter_mut().enumerate() {
            col *= scale[j];
        }
        let gram = theta_n.tr_mul(&theta_n);
        let xty = theta_n.tr_mul(y);
        Self { scale, theta: theta_n, y: y.clone(), gram, xty, yy: y.dot(y) }
    }

    fn select(&self, columns: &[usize]) -> Self {
        let k = columns.len();
        Self {
            scale: DVector::from_fn(k, |i, _| self.scale[columns[i]]),
            theta: self.theta.select_columns(columns),
            y: self.y.clone(),
            gram: DMatrix::from_fn(k, k, |i, j| self.gram[(columns[i], columns[j])]),
            xty: DVector::from_fn(k, |i, _| self.xty[columns[i]]),
            yy: self.yy,
        }
    }
}

impl<T: Real> RegressionProblem<T> {
    pub fn new(theta: DMatrix<T>, y: DVector<T>, sigma2: T) -> Result<Self> {
        if theta.nrows() == 0 || theta.ncols() == 0 {
            return Err(SparseArdError::InvalidParameter {
                name: "theta",
                value: 0.0,
                reason: "design must have at least one row and one column",
            });
        }
        if y.len() != theta.nrows() {
            return Err(SparseArdError::DimensionMismatch { what: "targets", expected: theta.nrows(), found: y.len() });
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(SparseArdError::NonFinite("design matrix"));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(SparseArdError::NonFinite("targets"));
        }
        check_sigma2(sigma2)?;
        let rho = DVector::from_iterator(theta.ncols(), theta.column_iter().map(|c| c.norm_squared()));
        Ok(Self { theta, y, sigma2, rho, normalized: OnceLock::new() })
    }

    pub fn theta(&self) -> &DMatrix<T> {
        &self.theta
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    /// Squared column norms `ρ_i = ‖Θ_i‖²`.
    pub fn rho(&self) -> &DVector<T> {
        &self.rho
    }

    /// Number of observations.
    pub fn m(&self) -> usize {
        self.theta.nrows()
    }

    /// Number of candidate features.
    pub fn d(&self) -> usize {
        self.theta.ncols()
    }

    /// Same data with a different noise variance. The equilibrated cache is shared.
    pub fn with_sigma2(&self, sigma2: T) -> Result<Self> {
        check_sigma2(sigma2)?;
        Ok(Self { sigma2, ..self.clone() })
    }

    /// Restriction to a subset of columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        let normalized = OnceLock::new();
        if let Some(parent) = self.normalized.get() {
            let _ = normalized.set(Arc::new(parent.select(columns)));
        }
        Self {
            theta: self.theta.select_columns(columns),
            y: self.y.clone(),
            sigma2: self.sigma2,
            rho: DVector::from_fn(columns.len(), |i, _| self.rho[columns[i]]),
            normalized,
        }
    }

    pub(crate) fn normalized(&self) -> &Normalized<T> {
        self.normalized.get_or_init(|| Arc::new(Normalized::build(&self.theta, &self.y, &self.rho)))
    }

    /// Largest relative deviation between the cached `ρ` and the column norms.
    pub fn rho_consistency(&self) -> T {
        self.theta
            .column_iter()
            .zip(self.rho.iter())
            .map(|(c, &r)| {
                let fresh = c.norm_squared();
                (fresh - r).abs() / T::one().max(fresh.abs())
            })
            .fold(T::zero(), |a, b| a.max(b))
    }
}

fn check_sigma2<T: Real>(sigma2: T) -> Result<()> {
    if !(sigma2.is_finite() && sigma2 > T::zero()) {
        return Err(SparseArdError::InvalidParameter {
            name: "sigma2",
            value: crate::scalar::to_f64(sigma2),
            reason: "noise variance must be positive and finite",
        });
    }
    Ok(())
}

/// Largest diagonal jitter tried before a system is declared singular,
/// relative to the mean diagonal.
const MAX_JITTER: f64 = 1e-6;

/// Cholesky factorization, retrying with escalating diagonal jitter
/// (1e-12, 1e-11, ..., 1e-6 times the mean diagonal).
pub(crate) fn cholesky_with_jitter<T: Real>(a: DMatrix<T>) -> Result<Cholesky<T, Dyn>> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(SparseArdError::NonFinite("matrix to factor"));
    }
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch);
    }
    let n = a.nrows();
    let mean_diag = if n == 0 {
        T::one()
    } else {
        let s = a.diagonal().iter().fold(T::zero(), |s, &v| s + v.abs());
        let s = s / crate::scalar::from_usize(n);
        if s > T::zero() {
            s
        } else {
            T::one()
        }
    };
    let mut jitter = 1e-12;
    while jitter <= MAX_JITTER * 1.000001 {
        let mut b = a.clone();
        let add = mean_diag * cast(jitter);
        for i in 0..n {
            b[(i, i)] += add;
        }
        if let Some(ch) = Cholesky::new(b) {
            return Ok(ch);
        }
        jitter *= 10.0;
    }
    Err(SparseArdError::SingularSystem { jitter: MAX_JITTER })
}

/// Below this value (on the column-equilibrated scale) a prior variance is exactly zero.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// Converts prior variances to the equilibrated scale, snapping tiny values and
/// dead columns to exact zero.
pub(crate) fn to_normalized_gamma<T: Real>(norm: &Normalized<T>, gamma: &DVector<T>) -> DVector<T> {
    let floor: T = cast(GAMMA_FLOOR);
    DVector::from_fn(gamma.len(), |i, _| {
        let s = norm.scale[i];
        if s <= T::zero() {
            return T::zero();
        }
        let g = gamma[i] / (s * s);
        if g < floor {
            T::zero()
        } else {
            g
        }
    })
}

/// Gaussian posterior of ξ given prior variances γ:
/// `Σ_ξ = (σ⁻²ΘᵀΘ + Γ⁻¹)⁻¹`, `μ_ξ = σ⁻²Σ_ξΘᵀy`.
///
/// Coordinates with `γ_i = 0` are deterministically zero: their rows and
/// columns of `Σ_ξ` and their entries of `μ_ξ` are exactly zero.
pub fn posterior_moments<T: Real>(
    problem: &RegressionProblem<T>,
    gamma: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    check_gamma(problem, gamma)?;
    let norm = problem.normalized();
    let gn = to_normalized_gamma(norm, gamma);
    let ev = evidence(norm, &gn, problem.sigma2(), EvidenceRequest { c: false, full_covariance: true })?;
    let d = problem.d();
    let mu = DVector::from_fn(d, |i, _| ev.mu[i] * norm.scale[i]);
    let mut sigma = DMatrix::zeros(d, d);
    let full = ev.sigma_full.as_ref().expect("requested");
    for (a, &i) in ev.support.iter().enumerate() {
        for (b, &j) in ev.support.iter().enumerate() {
            sigma[(i, j)] = full[(a, b)] * norm.scale[i] * norm.scale[j];
        }
    }
    Ok((mu, sigma))
}

pub(crate) fn check_gamma<T: Real>(problem: &RegressionProblem<T>, gamma: &DVector<T>) -> Result<()> {
    if gamma.len() != problem.d() {
        return Err(SparseArdError::DimensionMismatch { what: "gamma", expected: problem.d(), found: gamma.len() });
    }
    for &g in gamma.iter() {
        if !g.is_finite() {
            return Err(SparseArdError::NonFinite("gamma"));
        }
        if g < T::zero() {
            return Err(SparseArdError::InvalidParameter {
                name: "gamma",
                value: crate::scalar::to_f64(g),
                reason: "prior variances must be nonnegative",
            });
        }
    }
    Ok(())
}
