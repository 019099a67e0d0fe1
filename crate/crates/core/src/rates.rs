//! Closed-form false-positive and false-negative rates for designs with
//! orthogonal columns.
//!
//! On such designs every method reduces, per coordinate, to keeping `ξ_i`
//! exactly when the effective measurement `ρ_i⁻¹Θ_iᵀy ~ N(ξ_i, σ²/ρ_i)`
//! leaves a band `±ψ`. The width ψ is the only method-specific quantity.

use crate::error::{Result, SparseArdError};
use crate::scalar::{cast, from_usize, to_f64, Real};
use crate::sparsifiers::Method;

const SERIES_LIMIT: f64 = 2.5;

/// Error function, accurate to about 1e-15 absolute in double precision.
pub fn erf<T: Real>(x: T) -> T {
    let limit: T = cast(SERIES_LIMIT);
    if x.abs() < limit {
        erf_series(x)
    } else if x > T::zero() {
        T::one() - erfc_fraction(x)
    } else {
        erfc_fraction(-x) - T::one()
    }
}

/// Complementary error function, with full relative accuracy in the right tail.
pub fn erfc<T: Real>(x: T) -> T {
    let limit: T = cast(SERIES_LIMIT);
    if x >= limit {
        erfc_fraction(x)
    } else if x <= -limit {
        cast::<T>(2.0) - erfc_fraction(-x)
    } else {
        T::one() - erf_series(x)
    }
}

/// `erf(x) = 2/√π · e^{-x²} Σ 2ⁿx^{2n+1}/(1·3···(2n+1))`; every term is positive.
fn erf_series<T: Real>(x: T) -> T {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let eps = T::default_epsilon();
    for n in 1..200 {
        term *= x2 + x2;
        term /= from_usize::<T>(2 * n + 1);
        sum += term;
        if term.abs() <= eps * sum.abs() {
            break;
        }
    }
    let two_over_sqrt_pi: T = T::frac_2_sqrt_pi();
    two_over_sqrt_pi * (-x2).exp() * sum
}

/// Continued fraction `erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))`
/// evaluated by the modified Lentz method; `x ≥ 2.5`.
fn erfc_fraction<T: Real>(x: T) -> T {
    let tiny: T = cast(f64::from(f32::MIN_POSITIVE));
    let eps = T::default_epsilon();
    let half: T = cast(0.5);
    let mut f = x;
    let mut c = x;
    let mut d = T::zero();
    for k in 1..500 {
        let a = from_usize::<T>(k) * half;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = c * d;
        f *= delta;
        if (delta - T::one()).abs() <= eps {
            break;
        }
    }
    let sqrt_pi = T::pi().sqrt();
    (-x * x).exp() / (sqrt_pi * f)
}

fn check_positive<T: Real>(name: &'static str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(SparseArdError::Domain(format!("{name} must be positive and finite, got {}", to_f64(v))))
    }
}

/// `σ²/ρ`, the variance of the effective measurement.
fn noise_ratio<T: Real>(rho: T, sigma: T) -> Result<T> {
    check_positive("rho", rho)?;
    check_positive("sigma", sigma)?;
    Ok(sigma * sigma / rho)
}

/// `φ(ξ) = ξ/2 + ½√(ξ² + 4σ²/ρ)·sgn ξ`, mapping a nonzero fixed-point
/// coefficient to the measurement that produces it. `φ(0)` is the right limit `σ/√ρ`.
pub fn phi<T: Real>(xi_star: T, rho: T, sigma: T) -> Result<T> {
    let a = noise_ratio(rho, sigma)?;
    let root = (xi_star * xi_star + cast::<T>(4.0) * a).sqrt();
    let half: T = cast(0.5);
    if xi_star < T::zero() {
        Ok(half * (xi_star - root))
    } else {
        Ok(half * (xi_star + root))
    }
}

/// Inverse of [`phi`]: `v − (σ²/ρ)/v`, defined for `|v| > σ/√ρ`.
pub fn phi_inverse<T: Real>(v: T, rho: T, sigma: T) -> Result<T> {
    let a = noise_ratio(rho, sigma)?;
    if !(v * v > a) {
        return Err(SparseArdError::Domain(format!("{} lies inside the dead band ±{}", to_f64(v), to_f64(a.sqrt()))));
    }
    Ok(v - a / v)
}

/// Posterior density at zero, `(2πΣ)^{-1/2} exp(−ξ²/(2Σ))`.
pub fn h_l<T: Real>(xi: T, sigma_xi_ii: T) -> T {
    (-xi * xi / (sigma_xi_ii + sigma_xi_ii)).exp() / (T::two_pi() * sigma_xi_ii).sqrt()
}

/// `ξ²/(2Σ)`.
pub fn h_map<T: Real>(xi: T, sigma_xi_ii: T) -> T {
    xi * xi / (sigma_xi_ii + sigma_xi_ii)
}

/// Marginal posterior precision at an ARD fixed point with coefficient `ξ`
/// on an orthogonal design: `(√(1 + 4σ²/(ρξ²)) + 1)·ρ/(2σ²)`.
pub fn fixed_point_precision<T: Real>(xi: T, rho: T, sigma: T) -> Result<T> {
    let a = noise_ratio(rho, sigma)?;
    let four: T = cast(4.0);
    Ok(((T::one() + four * a / (xi * xi)).sqrt() + T::one()) / (a + a))
}

/// [`h_l`] along the fixed-point curve; strictly decreasing in `|ξ|`.
pub fn h_l_tilde<T: Real>(xi: T, rho: T, sigma: T) -> Result<T> {
    let var = T::one() / fixed_point_precision(xi, rho, sigma)?;
    Ok(h_l(xi, var))
}

/// [`h_map`] along the fixed-point curve; strictly increasing in `|ξ|`.
pub fn h_map_tilde<T: Real>(xi: T, rho: T, sigma: T) -> Result<T> {
    let precision = fixed_point_precision(xi, rho, sigma)?;
    Ok(xi * xi * precision / cast(2.0))
}

/// `|ξ|` with `h̃_L(ξ) = τ`, by bisection on `log|ξ|` over
/// `[1e-12, 1e12]·σ/√ρ`.
pub fn h_l_tilde_inverse<T: Real>(tau: T, rho: T, sigma: T) -> Result<T> {
    let a = noise_ratio(rho, sigma)?;
    let root_a = a.sqrt();
    let mut lo = (root_a * cast(1e-12)).ln();
    let mut hi = (root_a * cast(1e12)).ln();
    let at = |log_xi: T| h_l_tilde(log_xi.exp(), rho, sigma);
    let (top, bottom) = (at(lo)?, at(hi)?);
    if !(tau < top && tau > bottom) {
        return Err(SparseArdError::Domain(format!(
            "threshold {} outside the attainable range ({}, {})",
            to_f64(tau),
            to_f64(bottom),
            to_f64(top)
        )));
    }
    let rel: T = cast(1e-12);
    let half: T = cast(0.5);
    for _ in 0..200 {
        let mid = half * (lo + hi);
        if at(mid)? > tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= rel {
            break;
        }
    }
    Ok((half * (lo + hi)).exp())
}

/// `|ξ|` with `h̃_MAP(ξ) = τ`: `2√(σ²τ²/(ρ(1 + 2τ)))`.
pub fn h_map_inverse<T: Real>(tau: T, rho: T, sigma: T) -> Result<T> {
    let a = noise_ratio(rho, sigma)?;
    if !(tau >= T::zero()) {
        return Err(SparseArdError::Domain(format!("threshold {} is negative", to_f64(tau))));
    }
    let two: T = cast(2.0);
    Ok(two * (a * tau * tau / (T::one() + two * tau)).sqrt())
}

/// Half-width of the pruning band on the effective measurement.
///
/// `param` is α for ARDvi, λ for ARDr (penalty `λγ`), τ for the thresholding
/// methods, and ignored for plain ARD.
pub fn psi<T: Real>(method: Method, param: T, rho: T, sigma: T) -> Result<T> {
    let a = noise_ratio(rho, sigma)?;
    let domain = |what: &str| {
        Err(SparseArdError::Domain(format!("{what} = {} is invalid for {}", to_f64(param), method.label())))
    };
    match method {
        Method::Ard => Ok(a.sqrt()),
        Method::Ardvi => {
            if !(param >= T::one()) {
                return domain("alpha");
            }
            Ok((param * a).sqrt())
        }
        Method::Ardr => {
            if !(param >= T::zero()) {
                return domain("lambda");
            }
            Ok((a + param * a * a).sqrt())
        }
        Method::MStsbl => {
            if !(param >= T::zero()) {
                return domain("tau");
            }
            phi(param, rho, sigma)
        }
        Method::LStsbl => {
            if !(param > T::zero()) {
                return domain("tau");
            }
            phi(h_l_tilde_inverse(param, rho, sigma)?, rho, sigma)
        }
        Method::MapStsbl => {
            if !(param >= T::zero()) {
                return domain("tau");
            }
            Ok((a * (param + param + T::one())).sqrt())
        }
    }
}

/// One coefficient of an orthogonal design under a given method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateQuery<T: Real> {
    pub xi_true: T,
    pub rho: T,
    pub sigma: T,
    pub method: Method,
    pub param: T,
}

/// A false-negative probability; undefined (reported as 0) for a true zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalseNegativeRate<T: Real> {
    pub value: T,
    pub defined: bool,
}

fn scaled<T: Real>(q: &RateQuery<T>) -> T {
    q.rho.sqrt() / (q.sigma * cast::<T>(2.0).sqrt())
}

/// Probability that a true zero is kept: `1 − erf(ψ√ρ/(σ√2))`.
pub fn fp_rate<T: Real>(q: &RateQuery<T>) -> Result<T> {
    let psi = psi(q.method, q.param, q.rho, q.sigma)?;
    Ok(erfc(psi * scaled(q)))
}

/// Probability that the nonzero `ξ` is pruned:
/// `½[erf((ξ+ψ)√ρ/(σ√2)) − erf((ξ−ψ)√ρ/(σ√2))]`.
pub fn fn_rate<T: Real>(q: &RateQuery<T>) -> Result<FalseNegativeRate<T>> {
    let psi = psi(q.method, q.param, q.rho, q.sigma)?;
    if q.xi_true == T::zero() {
        return Ok(FalseNegativeRate { value: T::zero(), defined: false });
    }
    let s = scaled(q);
    let x = q.xi_true.abs();
    let half: T = cast(0.5);
    // erfc difference keeps precision once both arguments are deep in the tail.
    let value = half * (erfc((x - psi) * s) - erfc((x + psi) * s));
    Ok(FalseNegativeRate { value, defined: true })
}

/// `(FP, FN)` along a parameter sweep.
pub fn fp_fn_curve<T: Real>(method: Method, param_grid: &[T], xi_true: T, rho: T, sigma: T) -> Result<Vec<(T, T)>> {
    param_grid
        .iter()
        .map(|&param| {
            let q = RateQuery { xi_true, rho, sigma, method, param };
            Ok((fp_rate(&q)?, fn_rate(&q)?.value))
        })
        .collect()
}

/// Both sides of `h_L(ξ, Σ) = exp(−h_MAP(ξ, Σ))/√(2πΣ)`.
pub fn density_map_relation<T: Real>(xi: T, sigma_xi_ii: T) -> Result<(T, T)> {
    check_positive("sigma_xi_ii", sigma_xi_ii)?;
    let lhs = h_l(xi, sigma_xi_ii);
    let rhs = (-h_map(xi, sigma_xi_ii)).exp() / (T::two_pi() * sigma_xi_ii).sqrt();
    Ok((lhs, rhs))
}

/// Least-squares slope of `log ψ` against `log ρ`.
pub fn large_rho_scaling<T: Real>(method: Method, param: T, sigma: T, rho_grid: &[T]) -> Result<T> {
    if rho_grid.len() < 2 {
        return Err(SparseArdError::Domain("need at least two rho values".into()));
    }
    let points: Vec<(T, T)> =
        rho_grid.iter().map(|&rho| Ok((rho.ln(), psi(method, param, rho, sigma)?.ln()))).collect::<Result<_>>()?;
    let n = from_usize::<T>(points.len());
    let mx = points.iter().fold(T::zero(), |s, p| s + p.0) / n;
    let my = points.iter().fold(T::zero(), |s, p| s + p.1) / n;
    let (sxy, sxx) = points
        .iter()
        .fold((T::zero(), T::zero()), |(sxy, sxx), &(x, y)| (sxy + (x - mx) * (y - my), sxx + (x - mx) * (x - mx)));
    Ok(sxy / sxx)
}
