//! Synthetic regression problems with known coefficients.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use sparse_ard::dynamics::pooled_std;
use sparse_ard::features::fourier_library_2d;
use sparse_ard::{RegressionProblem64, Result};

use crate::config::Spacing;

/// How the observation noise is sized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Standard deviation as a percentage of `std(Θξ)`.
    Percent(f64),
    Absolute(f64),
}

/// A generated problem. The problem's σ² is the true noise variance, or a
/// tiny positive value when the data are noiseless.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: RegressionProblem64,
    pub xi_true: DVector<f64>,
    pub noise_sigma: f64,
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let qr = gaussian_matrix(n, n, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// `r` singular values from 1 down to `1/κ`.
pub fn singular_values(r: usize, kappa: f64, spacing: Spacing) -> Vec<f64> {
    if r == 1 {
        return vec![1.0];
    }
    let low = 1.0 / kappa;
    (0..r)
        .map(|i| {
            let t = i as f64 / (r - 1) as f64;
            match spacing {
                Spacing::Log => kappa.powf(-t),
                Spacing::Linear => 1.0 - (1.0 - low) * t,
            }
        })
        .collect()
}

/// `U·diag(s)·Vᵀ` with Haar-random `U` (m×m) and `V` (d×d).
pub fn conditioned_design<R: Rng + ?Sized>(
    m: usize,
    d: usize,
    kappa: f64,
    spacing: Spacing,
    rng: &mut R,
) -> DMatrix<f64> {
    let r = m.min(d);
    let s = singular_values(r, kappa, spacing);
    let u = random_orthogonal(m, rng);
    let v = random_orthogonal(d, rng);
    let mut us = u.columns(0, r).into_owned();
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col *= s[j];
    }
    us * v.columns(0, r).transpose()
}

/// `k` standard-normal entries on a uniformly drawn support.
pub fn sparse_coefficients<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> DVector<f64> {
    let mut xi = DVector::zeros(d);
    for i in sample(rng, d, k).into_iter() {
        xi[i] = rng.sample(StandardNormal);
    }
    xi
}

/// Adds noise to `Θξ` and wraps the result.
pub fn observe<R: Rng + ?Sized>(
    theta: DMatrix<f64>,
    xi_true: DVector<f64>,
    noise: NoiseLevel,
    rng: &mut R,
) -> Result<Instance> {
    let clean = &theta * &xi_true;
    let noise_sigma = match noise {
        NoiseLevel::Percent(p) => p / 100.0 * pooled_std(clean.as_slice()),
        NoiseLevel::Absolute(s) => s,
    };
    let y =
        if noise_sigma > 0.0 { clean.map(|v| v + noise_sigma * rng.sample::<f64, _>(StandardNormal)) } else { clean };
    let sigma2 = if noise_sigma > 0.0 {
        noise_sigma * noise_sigma
    } else {
        f64::EPSILON * pooled_std(y.as_slice()).powi(2).max(1.0)
    };
    Ok(Instance { problem: RegressionProblem64::new(theta, y, sigma2)?, xi_true, noise_sigma })
}

/// Random ill-conditioned linear problem: `X = U·diag(s)·Vᵀ` with
/// singular values in `[1/κ, 1]`, `nonzero` standard-normal coefficients
/// and noise at `noise_percent`% of `std(Xξ)`.
pub fn build_linear_problem<R: Rng + ?Sized>(
    m: usize,
    d: usize,
    nonzero: usize,
    kappa: f64,
    noise: NoiseLevel,
    spacing: Spacing,
    rng: &mut R,
) -> Result<Instance> {
    let theta = conditioned_design(m, d, kappa, spacing, rng);
    let xi = sparse_coefficients(d, nonzero, rng);
    observe(theta, xi, noise, rng)
}

/// Orthogonal design `Q·diag(√ρ)` with `ρ_i ~ U(lo, hi)` and sparse
/// coefficients. Noise is added separately with [`observe`].
#[derive(Debug, Clone)]
pub struct OrthogonalDesign {
    pub theta: DMatrix<f64>,
    pub rho: DVector<f64>,
    pub xi_true: DVector<f64>,
}

pub fn orthogonal_design<R: Rng + ?Sized>(
    n: usize,
    nonzero: usize,
    rho_range: (f64, f64),
    rng: &mut R,
) -> OrthogonalDesign {
    let q = random_orthogonal(n, rng);
    let rho = if rho_range.0 < rho_range.1 {
        let dist = Uniform::new(rho_range.0, rho_range.1);
        DVector::from_fn(n, |_, _| rng.sample(dist))
    } else {
        DVector::from_element(n, rho_range.0)
    };
    let mut theta = q;
    for (j, mut col) in theta.column_iter_mut().enumerate() {
        col *= rho[j].sqrt();
    }
    let xi_true = sparse_coefficients(n, nonzero, rng);
    OrthogonalDesign { theta, rho, xi_true }
}

/// Sparse function on `[0, π)²` in the separable Fourier basis, sampled at
/// `m` uniform points.
pub fn build_fourier_problem<R: Rng + ?Sized>(
    m: usize,
    modes: usize,
    nonzero: usize,
    noise_percent: f64,
    rng: &mut R,
) -> Result<Instance> {
    let dist = Uniform::new(0.0, std::f64::consts::PI);
    let x = DMatrix::from_fn(m, 2, |_, _| rng.sample(dist));
    let theta = fourier_library_2d(&x, modes)?;
    let xi = sparse_coefficients(theta.ncols(), nonzero, rng);
    observe(theta, xi, NoiseLevel::Percent(noise_percent), rng)
}
