use nalgebra::{DMatrix, DVector};

use super::{cholesky_with_jitter, Normalized};
use crate::error::Result;
use crate::scalar::{from_usize, Real};

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct EvidenceRequest {
    pub c: bool,
    pub full_covariance: bool,
}

/// Everything the evidence framework needs at one value of γ, on the
/// equilibrated scale. Vectors have full length `d`; entries outside the
/// support are zero.
#[derive(Debug, Clone)]
pub(crate) struct Evidence<T: Real> {
    pub support: Vec<usize>,
    /// `log|Σ_y|`.
    pub log_det: T,
    /// `yᵀΣ_y⁻¹y`.
    pub quad: T,
    pub mu: DVector<T>,
    pub sigma_diag: DVector<T>,
    /// Posterior covariance restricted to `support` (in support order).
    pub sigma_full: Option<DMatrix<T>>,
    /// `diag(ΘᵀΣ_y⁻¹Θ)`; empty unless requested.
    pub c: DVector<T>,
    /// `‖y − Θμ‖²`.
    pub rss: T,
    /// `Σ_i (1 − Σ_ii/γ_i)` over the support.
    pub dof: T,
}

impl<T: Real> Evidence<T> {
    pub fn loss(&self) -> T {
        self.log_det + self.quad
    }
}

/// Evaluates the evidence terms at `Σ_y = s2·I + ΘΓΘᵀ`.
///
/// Uses a k×k factorization on the support when `k ≤ m`, and the m×m
/// covariance otherwise.
pub(crate) fn evidence<T: Real>(
    norm: &Normalized<T>,
    gamma: &DVector<T>,
    s2: T,
    req: EvidenceRequest,
) -> Result<Evidence<T>> {
    let d = gamma.len();
    let m = norm.theta.nrows();
    let support: Vec<usize> = (0..d).filter(|&i| gamma[i] > T::zero()).collect();
    let k = support.len();
    if k == 0 {
        let c = if req.c { norm.gram.diagonal() / s2 } else { DVector::zeros(0) };
        return Ok(Evidence {
            support,
            log_det: from_usize::<T>(m) * s2.ln(),
            quad: norm.yy / s2,
            mu: DVector::zeros(d),
            sigma_diag: DVector::zeros(d),
            sigma_full: req.full_covariance.then(|| DMatrix::zeros(0, 0)),
            c,
            rss: norm.yy,
            dof: T::zero(),
        });
    }
    if k <= m {
        support_form(norm, gamma, s2, req, support)
    } else {
        direct_form(norm, gamma, s2, req, support)
    }
}

/// `‖y − Θμ‖²`, formed explicitly: the Gram expansion loses everything when
/// the fit is tight.
fn residual<T: Real>(norm: &Normalized<T>, support: &[usize], mu: &DVector<T>) -> T {
    let mut r = norm.y.clone();
    for &j in support {
        r.axpy(-mu[j], &norm.theta.column(j), T::one());
    }
    r.norm_squared()
}

fn support_form<T: Real>(
    norm: &Normalized<T>,
    gamma: &DVector<T>,
    s2: T,
    req: EvidenceRequest,
    support: Vec<usize>,
) -> Result<Evidence<T>> {
    let d = gamma.len();
    let m = norm.theta.nrows();
    let k = support.len();
    let g = DVector::from_fn(k, |a, _| gamma[support[a]].sqrt());
    let inv_s2 = T::one() / s2;
    let mut b = DMatrix::from_fn(k, k, |a, c| g[a] * g[c] * norm.gram[(support[a], support[c])] * inv_s2);
    for a in 0..k {
        b[(a, a)] += T::one();
    }
    let chol = cholesky_with_jitter(b)?;
    let l = chol.l_dirty();
    let log_det_b = (0..k).fold(T::zero(), |s, a| s + l[(a, a)].ln());
    let log_det = from_usize::<T>(m) * s2.ln() + log_det_b + log_det_b;

    let v = DVector::from_fn(k, |a, _| g[a] * norm.xty[support[a]] * inv_s2);
    let w = chol.solve(&v);
    let mut mu = DVector::zeros(d);
    for (a, &i) in support.iter().enumerate() {
        mu[i] = g[a] * w[a];
    }
    let rss = residual(norm, &support, &mu);
    let quad = rss * inv_s2 + w.norm_squared();

    let binv = chol.inverse();
    let mut sigma_diag = DVector::zeros(d);
    let mut dof = T::zero();
    for (a, &i) in support.iter().enumerate() {
        sigma_diag[i] = gamma[i] * binv[(a, a)];
        dof += T::one() - binv[(a, a)];
    }
    let sigma_full = req.full_covariance.then(|| DMatrix::from_fn(k, k, |a, c| g[a] * binv[(a, c)] * g[c]));

    let c = if req.c {
        // c_j = G_jj/s2 − s2⁻²·G_Sjᵀ Σ_S G_Sj, with Σ_S = diag(g) B⁻¹ diag(g).
        let mut z = DMatrix::from_fn(k, d, |a, j| g[a] * norm.gram[(support[a], j)]);
        chol.l_dirty().solve_lower_triangular_unchecked_mut(&mut z);
        let floor = T::default_epsilon();
        let mut c = DVector::from_fn(d, |j, _| {
            let gjj = norm.gram[(j, j)];
            let zz = z.column(j).norm_squared();
            gjj * inv_s2 - zz * inv_s2 * inv_s2
        });
        // On the support the subtraction above cancels badly once γ_j ≫ s2;
        // there c_j = (1 − (B⁻¹)_jj)/γ_j is the accurate form.
        let half: T = crate::scalar::cast(0.5);
        for (a, &i) in support.iter().enumerate() {
            if binv[(a, a)] < half {
                c[i] = (T::one() - binv[(a, a)]) / gamma[i];
            }
        }
        for j in 0..d {
            let lo = floor * norm.gram[(j, j)] * inv_s2;
            if c[j] < lo {
                c[j] = lo;
            }
        }
        c
    } else {
        DVector::zeros(0)
    };

    Ok(Evidence { support, log_det, quad, mu, sigma_diag, sigma_full, c, rss, dof })
}

fn direct_form<T: Real>(
    norm: &Normalized<T>,
    gamma: &DVector<T>,
    s2: T,
    req: EvidenceRequest,
    support: Vec<usize>,
) -> Result<Evidence<T>> {
    let d = gamma.len();
    let m = norm.theta.nrows();
    let mut a = norm.theta.select_columns(&support);
    for (col, &i) in support.iter().enumerate() {
        let gi = gamma[i].sqrt();
        a.column_mut(col).scale_mut(gi);
    }
    let mut sy = &a * a.transpose();
    for r in 0..m {
        sy[(r, r)] += s2;
    }
    let chol = cholesky_with_jitter(sy)?;
    let l = chol.l_dirty();
    let log_det = (0..m).fold(T::zero(), |s, r| s + l[(r, r)].ln()) * crate::scalar::cast(2.0);
    let mut u = norm.y.clone();
    l.solve_lower_triangular_unchecked_mut(&mut u);
    let quad = u.norm_squared();
    let alpha = chol.solve(&norm.y);

    let mut w_s = norm.theta.select_columns(&support);
    l.solve_lower_triangular_unchecked_mut(&mut w_s);

    let mut mu = DVector::zeros(d);
    let mut sigma_diag = DVector::zeros(d);
    let mut dof = T::zero();
    let proj = norm.theta.select_columns(&support).tr_mul(&alpha);
    for (col, &i) in support.iter().enumerate() {
        mu[i] = gamma[i] * proj[col];
        let ci = w_s.column(col).norm_squared();
        sigma_diag[i] = (gamma[i] - gamma[i] * gamma[i] * ci).max(T::zero());
        dof += gamma[i] * ci;
    }
    let rss = residual(norm, &support, &mu);
    let sigma_full = req.full_covariance.then(|| {
        let mut wg = w_s.clone();
        for (col, &i) in support.iter().enumerate() {
            wg.column_mut(col).scale_mut(gamma[i]);
        }
        let mut s = -(wg.tr_mul(&wg));
        for (col, &i) in support.iter().enumerate() {
            s[(col, col)] += gamma[i];
        }
        s
    });

    let c = if req.c {
        let mut w = norm.theta.clone();
        l.solve_lower_triangular_unchecked_mut(&mut w);
        let floor = T::default_epsilon();
        DVector::from_fn(d, |j, _| {
            let lo = floor * norm.gram[(j, j)] / s2;
            w.column(j).norm_squared().max(lo)
        })
    } else {
        DVector::zeros(0)
    };

    Ok(Evidence { support, log_det, quad, mu, sigma_diag, sigma_full, c, rss, dof })
}
