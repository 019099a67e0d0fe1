//! Candidate libraries for sparse regression and finite-difference
//! differentiation of sampled data.
//!
//! Column orders:
//! - polynomial: graded lexicographic. The constant comes first, then each
//!   total degree in turn, monomials within a degree ordered by their
//!   nondecreasing variable-index tuples (`x₁x₁, x₁x₂, …, x₂x₂, …`). A
//!   lower-degree library is a prefix of a higher-degree one.
//! - Fourier 2D: `φ_j(x₁)·φ_k(x₂)` at column `j·modes + k`, with `φ_0 = 1`,
//!   `φ_{2r−1} = sin(2r·x)` and `φ_{2r} = cos(2r·x)`.
//! - PDE: `u^p·∂_x^q u` at column `q·(max_power + 1) + p`, where the `q = 0`
//!   factor is 1; rows follow the column-major layout of the field.

use nalgebra::DMatrix;

use crate::error::{Result, SparseArdError};
use crate::scalar::{cast, from_usize, to_f64, Real};

/// Default limit on the number of generated columns.
pub const DEFAULT_COLUMN_CAP: usize = 100_000;

/// Accuracy order of every finite-difference stencil.
pub const FD_ORDER: usize = 6;

/// Smallest periodic grid accepted by [`pde_library`].
pub const MIN_PDE_POINTS: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LibrarySpec {
    Polynomial { degree: usize },
    Fourier2d { modes: usize },
    Pde { max_power: usize, max_deriv: usize },
}

impl LibrarySpec {
    /// Number of columns produced for `n_vars` input variables
    /// (ignored by the Fourier and PDE libraries), or `None` on overflow.
    pub fn columns(&self, n_vars: usize) -> Option<usize> {
        match *self {
            LibrarySpec::Polynomial { degree } => binomial(degree + n_vars, degree),
            LibrarySpec::Fourier2d { modes } => modes.checked_mul(modes),
            LibrarySpec::Pde { max_power, max_deriv } => (max_power + 1).checked_mul(max_deriv + 1),
        }
    }
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Exponent vectors of every monomial in `n` variables of total degree at
/// most `degree`, in library column order.
pub fn polynomial_exponents(n: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; n]];
    for total in 1..=degree {
        let mut idx = vec![0usize; total];
        loop {
            let mut e = vec![0; n];
            for &i in &idx {
                e[i] += 1;
            }
            out.push(e);
            // Next nondecreasing tuple.
            let Some(pos) = (0..total).rev().find(|&p| idx[p] + 1 < n) else {
                break;
            };
            let v = idx[pos] + 1;
            for slot in idx.iter_mut().skip(pos) {
                *slot = v;
            }
        }
    }
    out
}

/// Human-readable monomial names such as `1`, `x`, `x^2 y`.
pub fn polynomial_names(vars: &[&str], degree: usize) -> Vec<String> {
    polynomial_exponents(vars.len(), degree)
        .into_iter()
        .map(|e| {
            let parts: Vec<String> = e
                .iter()
                .zip(vars)
                .filter(|(&p, _)| p > 0)
                .map(|(&p, v)| if p == 1 { v.to_string() } else { format!("{v}^{p}") })
                .collect();
            if parts.is_empty() {
                "1".to_string()
            } else {
                parts.join(" ")
            }
        })
        .collect()
}

pub fn polynomial_library<T: Real>(x: &DMatrix<T>, degree: usize) -> Result<DMatrix<T>> {
    polynomial_library_capped(x, degree, DEFAULT_COLUMN_CAP)
}

pub fn polynomial_library_capped<T: Real>(x: &DMatrix<T>, degree: usize, cap: usize) -> Result<DMatrix<T>> {
    let n = x.ncols();
    let columns = LibrarySpec::Polynomial { degree }.columns(n).unwrap_or(usize::MAX);
    if columns > cap {
        return Err(SparseArdError::DimensionOverflow { columns, cap });
    }
    let exps = polynomial_exponents(n, degree);
    let mut out = DMatrix::from_element(x.nrows(), exps.len(), T::one());
    // Each monomial of degree ≥ 1 is a lower one times a single variable;
    // reuse that column.
    let mut index = std::collections::HashMap::with_capacity(exps.len());
    for (col, e) in exps.iter().enumerate() {
        index.insert(e.clone(), col);
        let Some(var) = e.iter().rposition(|&p| p > 0) else {
            continue;
        };
        let mut parent = e.clone();
        parent[var] -= 1;
        let pc = index[&parent];
        for r in 0..x.nrows() {
            out[(r, col)] = out[(r, pc)] * x[(r, var)];
        }
    }
    Ok(out)
}

/// `j`-th univariate Fourier function on `[0, π)`.
fn fourier_1d<T: Real>(j: usize, x: T) -> T {
    if j == 0 {
        return T::one();
    }
    let freq: T = from_usize::<T>(2 * j.div_ceil(2));
    if j % 2 == 1 {
        (freq * x).sin()
    } else {
        (freq * x).cos()
    }
}

/// Separable Fourier products on the torus `[0, π)²`; `modes²` columns.
pub fn fourier_library_2d<T: Real>(x: &DMatrix<T>, modes: usize) -> Result<DMatrix<T>> {
    if x.ncols() != 2 {
        return Err(SparseArdError::DimensionMismatch { what: "fourier points", expected: 2, found: x.ncols() });
    }
    let pi = T::pi();
    for v in x.iter() {
        if !(*v >= T::zero() && *v < pi) {
            return Err(SparseArdError::Domain(format!("point coordinate {} outside [0, pi)", to_f64(*v))));
        }
    }
    let m = x.nrows();
    let mut out = DMatrix::zeros(m, modes * modes);
    for r in 0..m {
        let a: Vec<T> = (0..modes).map(|j| fourier_1d(j, x[(r, 0)])).collect();
        let b: Vec<T> = (0..modes).map(|k| fourier_1d(k, x[(r, 1)])).collect();
        for j in 0..modes {
            for k in 0..modes {
                out[(r, j * modes + k)] = a[j] * b[k];
            }
        }
    }
    Ok(out)
}

/// Weights for the `deriv`-th derivative at `z` from values at `nodes`
/// (Fornberg's recursion).
pub fn fornberg_weights(z: f64, nodes: &[f64], deriv: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; deriv + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[deriv]).collect()
}

/// Half-width of the sixth-order central stencil for derivative `deriv`.
fn central_half_width(deriv: usize) -> usize {
    (deriv + 1) / 2 + FD_ORDER / 2 - 1
}

/// Points in the sixth-order one-sided stencil for derivative `deriv`.
fn one_sided_points(deriv: usize) -> usize {
    deriv + FD_ORDER
}

fn check_deriv(deriv: usize) -> Result<()> {
    if deriv == 0 || deriv > 4 {
        return Err(SparseArdError::InvalidParameter {
            name: "deriv",
            value: deriv as f64,
            reason: "derivative order must be between 1 and 4",
        });
    }
    Ok(())
}

fn check_step<T: Real>(h: T) -> Result<()> {
    if !(h > T::zero() && h.is_finite()) {
        return Err(SparseArdError::InvalidParameter {
            name: "step",
            value: to_f64(h),
            reason: "grid spacing must be positive and finite",
        });
    }
    Ok(())
}

/// Sixth-order derivative of each column of `series` sampled at spacing `dt`:
/// central stencils inside, one-sided stencils near both ends.
pub fn finite_difference<T: Real>(series: &DMatrix<T>, dt: T, deriv: usize) -> Result<DMatrix<T>> {
    check_deriv(deriv)?;
    check_step(dt)?;
    let m = series.nrows();
    let r = central_half_width(deriv);
    let width = one_sided_points(deriv).max(2 * r + 1);
    if m < width {
        return Err(SparseArdError::SeriesTooShort { len: m, min: width });
    }
    let scale = T::one() / dt.powi(deriv as i32);
    let central: Vec<T> = stencil((-(r as isize)..=r as isize).map(|o| o as f64), 0.0, deriv);
    let k = one_sided_points(deriv);
    let mut out = DMatrix::zeros(m, series.ncols());
    for i in 0..m {
        let (start, weights) = if i >= r && i + r < m {
            (i - r, central.clone())
        } else {
            let start = if i < r { 0 } else { m - k };
            (start, stencil((0..k).map(|o| o as f64), (i - start) as f64, deriv))
        };
        for col in 0..series.ncols() {
            let mut acc = T::zero();
            for (j, w) in weights.iter().enumerate() {
                acc += *w * series[(start + j, col)];
            }
            out[(i, col)] = acc * scale;
        }
    }
    Ok(out)
}

fn stencil<T: Real>(nodes: impl Iterator<Item = f64>, z: f64, deriv: usize) -> Vec<T> {
    let nodes: Vec<f64> = nodes.collect();
    fornberg_weights(z, &nodes, deriv).into_iter().map(cast).collect()
}

/// Sixth-order central derivative along the rows of `u` (one column per
/// time), treating the grid as periodic.
pub fn periodic_derivative<T: Real>(u: &DMatrix<T>, dx: T, deriv: usize) -> Result<DMatrix<T>> {
    check_deriv(deriv)?;
    check_step(dx)?;
    let n = u.nrows();
    if n < MIN_PDE_POINTS {
        return Err(SparseArdError::GridTooSmall { points: n, min: MIN_PDE_POINTS });
    }
    let r = central_half_width(deriv) as isize;
    let weights: Vec<T> = stencil((-r..=r).map(|o| o as f64), 0.0, deriv);
    let scale = T::one() / dx.powi(deriv as i32);
    let mut out = DMatrix::zeros(n, u.ncols());
    for t in 0..u.ncols() {
        for i in 0..n {
            let mut acc = T::zero();
            for (j, w) in weights.iter().enumerate() {
                let idx = (i as isize + j as isize - r).rem_euclid(n as isize) as usize;
                acc += *w * u[(idx, t)];
            }
            out[(i, t)] = acc * scale;
        }
    }
    Ok(out)
}

/// Library `{u^p·∂_x^q u : p ≤ 4, q ≤ 4}` for a periodic field `u` with
/// one column per time.
pub fn pde_library<T: Real>(u: &DMatrix<T>, dx: T) -> Result<DMatrix<T>> {
    pde_library_with(u, dx, 4, 4)
}

pub fn pde_library_with<T: Real>(u: &DMatrix<T>, dx: T, max_power: usize, max_deriv: usize) -> Result<DMatrix<T>> {
    if u.nrows() < MIN_PDE_POINTS {
        return Err(SparseArdError::GridTooSmall { points: u.nrows(), min: MIN_PDE_POINTS });
    }
    let rows = u.len();
    let mut derivs = vec![DMatrix::from_element(u.nrows(), u.ncols(), T::one())];
    for q in 1..=max_deriv {
        derivs.push(periodic_derivative(u, dx, q)?);
    }
    let width = max_power + 1;
    let mut out = DMatrix::zeros(rows, width * (max_deriv + 1));
    for (q, dq) in derivs.iter().enumerate() {
        for (row, (&uv, &dv)) in u.iter().zip(dq.iter()).enumerate() {
            let mut power = T::one();
            for p in 0..width {
                out[(row, q * width + p)] = power * dv;
                power *= uv;
            }
        }
    }
    Ok(out)
}

/// Names matching [`pde_library_with`] columns, e.g. `u^2 u_xx`.
pub fn pde_names(max_power: usize, max_deriv: usize) -> Vec<String> {
    let mut names = Vec::new();
    for q in 0..=max_deriv {
        for p in 0..=max_power {
            let power = match p {
                0 => String::new(),
                1 => "u".to_string(),
                _ => format!("u^{p}"),
            };
            let d = if q == 0 { String::new() } else { format!("u_{}", "x".repeat(q)) };
            let name = [power, d].iter().filter(|s| !s.is_empty()).cloned().collect::<Vec<_>>().join(" ");
            names.push(if name.is_empty() { "1".to_string() } else { name });
        }
    }
    names
}
