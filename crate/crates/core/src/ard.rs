//! Evidence maximization by iterated reweighted ℓ¹ (majorize-minimize) steps.
//!
//! Each iteration linearizes `log|Σ_y|` at the current γ, which gives weights
//! `c = diag(ΘᵀΣ_y⁻¹Θ)`, solves the weighted lasso with `η = 2σ²√c` and sets
//! `γ = |ξ|/√c`. The loss `log|Σ_y| + yᵀΣ_y⁻¹y` never increases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SparseArdError};
use crate::linops::{
    check_gamma, cholesky_with_jitter, evidence, lasso_gram, posterior_moments, to_normalized_gamma, EvidenceRequest,
    GramLasso, LassoMethod, LassoOptions, Normalized, RegressionProblem, GAMMA_FLOOR,
};
use crate::scalar::{cast, from_usize, to_f64, tol, Real};

/// Floor applied to re-estimated noise variances.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ArdOptions<T: Real> {
    pub max_iter: usize,
    /// Relative tolerance on `‖Δγ‖∞`.
    pub tol: f64,
    /// Re-estimate σ² after every γ update.
    pub relearn_noise: bool,
    /// Starting γ; `None` uses [`default_gamma_init`].
    pub gamma_init: Option<DVector<T>>,
    pub lasso: LassoMethod,
    pub lasso_options: LassoOptions,
    /// Also return the full posterior covariance.
    pub full_covariance: bool,
}

impl<T: Real> Default for ArdOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            relearn_noise: false,
            gamma_init: None,
            lasso: LassoMethod::Lars,
            lasso_options: LassoOptions::default(),
            full_covariance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArdFit<T: Real> {
    pub gamma: DVector<T>,
    pub mu_xi: DVector<T>,
    pub sigma_xi_diag: DVector<T>,
    pub sigma_xi_full: Option<DMatrix<T>>,
    /// Reweighting vector at the returned γ (including any regularizer slope).
    pub c: DVector<T>,
    /// Lasso weights `2ασ²√c` at the returned γ.
    pub eta: DVector<T>,
    /// Final noise variance (re-estimated if requested, never inflated).
    pub sigma2: T,
    /// Loss at the initial γ and after every update.
    pub loss_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> ArdFit<T> {
    /// Indices with `γ_i > 0`, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..self.gamma.len()).filter(|&i| self.gamma[i] > T::zero()).collect()
    }

    pub fn support_size(&self) -> usize {
        self.gamma.iter().filter(|&&g| g > T::zero()).count()
    }
}

/// Separable penalty `Σ g(γ_i)` added to the evidence loss.
pub trait Regularizer<T: Real>: Send + Sync {
    fn value(&self, gamma: T, sigma2: T) -> T;
    /// Derivative in γ; at kinks, the left derivative.
    fn slope(&self, gamma: T, sigma2: T) -> T;
}

/// `γ_i = (Θ_iᵀy)²/ρ_i²`, clipped below at 1e-6; zero columns get zero.
pub fn default_gamma_init<T: Real>(problem: &RegressionProblem<T>) -> DVector<T> {
    let xty = problem.theta().tr_mul(problem.y());
    let floor: T = cast(1e-6);
    DVector::from_fn(problem.d(), |i, _| {
        let r = problem.rho()[i];
        if r > T::zero() {
            (xty[i] * xty[i] / (r * r)).max(floor)
        } else {
            T::zero()
        }
    })
}

pub fn fit_ard<T: Real>(problem: &RegressionProblem<T>, options: &ArdOptions<T>) -> Result<ArdFit<T>> {
    Ok(fit_core(problem, options, T::one(), None)?.0)
}

/// Diagnostics that do not belong in [`ArdFit`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct CoreFlags {
    /// Some `c_i + g'(γ_i)` was nonpositive and had to be clamped.
    pub clamped: bool,
}

/// The shared loop. `alpha` inflates σ² in the reweighting and lasso steps;
/// `reg` adds a separable penalty on γ.
pub(crate) fn fit_core<T: Real>(
    problem: &RegressionProblem<T>,
    options: &ArdOptions<T>,
    alpha: T,
    reg: Option<&dyn Regularizer<T>>,
) -> Result<(ArdFit<T>, CoreFlags)> {
    let norm = problem.normalized();
    let d = problem.d();
    let init = match &options.gamma_init {
        Some(g) => {
            check_gamma(problem, g)?;
            g.clone()
        }
        None => default_gamma_init(problem),
    };
    let mut gn = to_normalized_gamma(norm, &init);
    let mut s2 = problem.sigma2();
    let mut flags = CoreFlags::default();
    let mut trace = Vec::new();
    let gamma_tol: T = tol(options.tol);
    let b_inf = norm.xty.amax();
    let kkt = DVector::from_element(d, tol::<T>(options.lasso_options.kkt_tol) * T::one().max(b_inf));
    let two: T = cast(2.0);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..options.max_iter {
        let ev = evidence(norm, &gn, alpha * s2, EvidenceRequest { c: true, full_covariance: false })?;
        trace.push(ev.loss() + penalty(reg, norm, &gn, s2));
        let c = reweight(norm, &gn, ev.c, reg, s2, &mut flags);
        let eta = c.map(|ci| two * alpha * s2 * ci.sqrt());
        let xi = lasso_gram(
            GramLasso { gram: &norm.gram, xty: &norm.xty },
            &eta,
            &kkt,
            options.lasso,
            &options.lasso_options,
            None,
        )?
        .xi;
        let next = update_gamma(norm, &xi, &c);
        iterations += 1;
        if options.relearn_noise {
            s2 = relearn_normalized(norm, &next, s2)?.0;
        }
        let step = max_original_delta(norm, &gn, &next);
        let scale = T::one() + max_original(norm, &gn);
        gn = next;
        if !step.is_finite() {
            return Err(SparseArdError::NonFinite("gamma iterate"));
        }
        if step <= gamma_tol * scale {
            converged = true;
            break;
        }
    }

    let ev = evidence(norm, &gn, alpha * s2, EvidenceRequest { c: true, full_covariance: options.full_covariance })?;
    trace.push(ev.loss() + penalty(reg, norm, &gn, s2));
    let c = reweight(norm, &gn, ev.c.clone(), reg, s2, &mut flags);
    let scale = &norm.scale;
    let orig = |v: T, i: usize, power: i32| -> T {
        let s = scale[i];
        if s > T::zero() {
            v * s.powi(power)
        } else {
            T::zero()
        }
    };
    let gamma = DVector::from_fn(d, |i, _| orig(gn[i], i, 2));
    let mu_xi = DVector::from_fn(d, |i, _| orig(ev.mu[i], i, 1));
    let sigma_xi_diag = DVector::from_fn(d, |i, _| orig(ev.sigma_diag[i], i, 2));
    let c_orig = DVector::from_fn(d, |i, _| orig(c[i], i, -2));
    let eta = DVector::from_fn(d, |i, _| orig(two * alpha * s2 * c[i].sqrt(), i, -1));
    let sigma_xi_full = ev.sigma_full.as_ref().map(|full| {
        let mut out = DMatrix::zeros(d, d);
        for (a, &i) in ev.support.iter().enumerate() {
            for (b, &j) in ev.support.iter().enumerate() {
                out[(i, j)] = full[(a, b)] * scale[i] * scale[j];
            }
        }
        out
    });
    for v in trace.iter() {
        if !v.is_finite() {
            return Err(SparseArdError::NonFinite("loss"));
        }
    }
    Ok((
        ArdFit {
            gamma,
            mu_xi,
            sigma_xi_diag,
            sigma_xi_full,
            c: c_orig,
            eta,
            sigma2: s2,
            loss_trace: trace,
            iterations,
            converged,
        },
        flags,
    ))
}

fn penalty<T: Real>(reg: Option<&dyn Regularizer<T>>, norm: &Normalized<T>, gn: &DVector<T>, s2: T) -> T {
    match reg {
        None => T::zero(),
        Some(r) => (0..gn.len()).filter(|&i| norm.is_live(i)).fold(T::zero(), |acc, i| {
            let s = norm.scale[i];
            acc + r.value(gn[i] * s * s, s2)
        }),
    }
}

/// Adds the regularizer slope (on the equilibrated scale) and clamps
/// nonpositive entries of live columns.
fn reweight<T: Real>(
    norm: &Normalized<T>,
    gn: &DVector<T>,
    mut c: DVector<T>,
    reg: Option<&dyn Regularizer<T>>,
    s2: T,
    flags: &mut CoreFlags,
) -> DVector<T> {
    if let Some(r) = reg {
        let floor: T = cast(1e-12);
        for i in 0..c.len() {
            if !norm.is_live(i) {
                continue;
            }
            let s = norm.scale[i];
            c[i] += r.slope(gn[i] * s * s, s2) * s * s;
            if !(c[i] > T::zero()) {
                c[i] = floor;
                flags.clamped = true;
            }
        }
    }
    c
}

fn update_gamma<T: Real>(norm: &Normalized<T>, xi: &DVector<T>, c: &DVector<T>) -> DVector<T> {
    let floor: T = cast(GAMMA_FLOOR);
    DVector::from_fn(xi.len(), |i, _| {
        if !norm.is_live(i) || c[i] <= T::zero() || xi[i] == T::zero() {
            return T::zero();
        }
        let g = xi[i].abs() / c[i].sqrt();
        if g < floor {
            T::zero()
        } else {
            g
        }
    })
}

fn max_original<T: Real>(norm: &Normalized<T>, gn: &DVector<T>) -> T {
    (0..gn.len()).fold(T::zero(), |m, i| {
        let s = norm.scale[i];
        m.max(gn[i] * s * s)
    })
}

fn max_original_delta<T: Real>(norm: &Normalized<T>, a: &DVector<T>, b: &DVector<T>) -> T {
    (0..a.len()).fold(T::zero(), |m, i| {
        let s = norm.scale[i];
        m.max((a[i] - b[i]).abs() * s * s)
    })
}

/// Effective-degrees-of-freedom noise estimate at γ (equilibrated scale),
/// using the posterior at the current, un-inflated σ². Returns the estimate
/// and whether the floor was hit.
fn relearn_normalized<T: Real>(norm: &Normalized<T>, gn: &DVector<T>, s2: T) -> Result<(T, bool)> {
    let ev = evidence(norm, gn, s2, EvidenceRequest::default())?;
    let m = from_usize::<T>(norm.theta.nrows());
    let denom = m - ev.dof;
    if !(denom > T::zero()) {
        return Ok((s2, false));
    }
    let est = ev.rss / denom;
    let floor: T = cast(NOISE_FLOOR);
    if !(est > floor) {
        return Ok((floor, true));
    }
    Ok((est, false))
}

/// `σ² ← ‖y − Θμ_ξ‖² / (m − Σ_i(1 − Σ_ξ,ii/γ_i))` evaluated at the problem's
/// current σ².
///
/// Fails with [`SparseArdError::DegenerateResidual`] when the residual
/// vanishes; the error carries the floor value callers should substitute.
pub fn relearn_noise<T: Real>(problem: &RegressionProblem<T>, gamma: &DVector<T>) -> Result<T> {
    check_gamma(problem, gamma)?;
    let k = gamma.iter().filter(|&&g| g > T::zero()).count();
    if problem.m() <= k {
        return Err(SparseArdError::InvalidParameter {
            name: "gamma",
            value: k as f64,
            reason: "noise re-estimation needs more observations than active coefficients",
        });
    }
    let norm = problem.normalized();
    let gn = to_normalized_gamma(norm, gamma);
    let (est, floored) = relearn_normalized(norm, &gn, problem.sigma2())?;
    if floored {
        return Err(SparseArdError::DegenerateResidual { floor: NOISE_FLOOR });
    }
    Ok(est)
}

/// `diag(ΘᵀΣ_y⁻¹Θ)` with `Σ_y = ασ²I + ΘΓΘᵀ`.
pub fn compute_c<T: Real>(problem: &RegressionProblem<T>, gamma: &DVector<T>, alpha: T) -> Result<DVector<T>> {
    check_gamma(problem, gamma)?;
    if !(alpha >= T::one()) {
        return Err(SparseArdError::InvalidParameter {
            name: "alpha",
            value: to_f64(alpha),
            reason: "inflation factor must be at least 1",
        });
    }
    let norm = problem.normalized();
    let gn = to_normalized_gamma(norm, gamma);
    let ev = evidence(norm, &gn, alpha * problem.sigma2(), EvidenceRequest { c: true, full_covariance: false })?;
    Ok(DVector::from_fn(problem.d(), |i, _| {
        let s = norm.scale[i];
        if s > T::zero() {
            ev.c[i] / (s * s)
        } else {
            T::zero()
        }
    }))
}

/// `log|Σ_y| + yᵀΣ_y⁻¹y` with `Σ_y = σ²I + ΘΓΘᵀ`, additive constants dropped.
pub fn negative_log_evidence<T: Real>(problem: &RegressionProblem<T>, gamma: &DVector<T>) -> Result<T> {
    check_gamma(problem, gamma)?;
    let norm = problem.normalized();
    let gn = to_normalized_gamma(norm, gamma);
    Ok(evidence(norm, &gn, problem.sigma2(), EvidenceRequest::default())?.loss())
}

/// Both sides of `yᵀΣ_y⁻¹y = σ⁻²‖y − Θμ_ξ‖² + μ_ξᵀΓ⁻¹μ_ξ`.
///
/// The left side is computed from a factorization of the m×m covariance and
/// the right side from the posterior moments, so the two share no work.
pub fn verify_loss_identity<T: Real>(problem: &RegressionProblem<T>, gamma: &DVector<T>) -> Result<(T, T)> {
    check_gamma(problem, gamma)?;
    let theta = problem.theta();
    let s2 = problem.sigma2();
    let mut sy = theta * DMatrix::from_diagonal(gamma) * theta.transpose();
    for i in 0..problem.m() {
        sy[(i, i)] += s2;
    }
    let lhs = problem.y().dot(&cholesky_with_jitter(sy)?.solve(problem.y()));

    let (mu, _) = posterior_moments(problem, gamma)?;
    let resid = problem.y() - theta * &mu;
    let prior =
        (0..gamma.len()).filter(|&i| gamma[i] > T::zero()).fold(T::zero(), |acc, i| acc + mu[i] * mu[i] / gamma[i]);
    Ok((lhs, resid.norm_squared() / s2 + prior))
}
