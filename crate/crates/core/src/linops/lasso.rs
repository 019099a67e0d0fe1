use nalgebra::{DMatrix, DVector};

use super::RegressionProblem;
use crate::error::{Result, SparseArdError};
use crate::scalar::{cast, from_usize, to_f64, tol, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LassoMethod {
    /// Least-angle homotopy, polished by coordinate descent if needed.
    #[default]
    Lars,
    CoordinateDescent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// LARS step cap; `None` means `10·d`.
    pub max_lars_steps: Option<usize>,
    pub max_sweeps: usize,
    /// KKT tolerance relative to `max(1, ‖Θᵀy‖∞)`.
    pub kkt_tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { max_lars_steps: None, max_sweeps: 10_000, kkt_tol: 1e-8 }
    }
}

/// Minimizer of `‖y − Θξ‖² + Σ η_i|ξ_i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLassoSolution<T: Real> {
    pub xi: DVector<T>,
    pub objective: T,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

pub fn solve_weighted_lasso<T: Real>(
    problem: &RegressionProblem<T>,
    eta: &DVector<T>,
    method: LassoMethod,
) -> Result<WeightedLassoSolution<T>> {
    solve_weighted_lasso_with(problem, eta, method, &LassoOptions::default())
}

pub fn solve_weighted_lasso_with<T: Real>(
    problem: &RegressionProblem<T>,
    eta: &DVector<T>,
    method: LassoMethod,
    options: &LassoOptions,
) -> Result<WeightedLassoSolution<T>> {
    check_eta(problem.d(), eta)?;
    let norm = problem.normalized();
    let d = problem.d();
    let eta_n = DVector::from_fn(d, |i, _| eta[i] * norm.scale[i]);
    let xty_inf = problem.theta().tr_mul(problem.y()).amax();
    let tol_orig = tol::<T>(options.kkt_tol) * T::one().max(xty_inf);
    let tol = DVector::from_fn(d, |i, _| tol_orig * norm.scale[i]);
    let sol = lasso_gram(GramLasso { gram: &norm.gram, xty: &norm.xty }, &eta_n, &tol, method, options, None)?;
    let xi = DVector::from_fn(d, |i, _| sol.xi[i] * norm.scale[i]);
    let resid = problem.y() - problem.theta() * &xi;
    let objective = resid.norm_squared() + xi.iter().zip(eta.iter()).fold(T::zero(), |s, (&x, &e)| s + e * x.abs());
    let active_set = (0..d).filter(|&i| xi[i] != T::zero()).collect();
    Ok(WeightedLassoSolution { xi, objective, active_set, iterations: sol.iterations })
}

fn check_eta<T: Real>(d: usize, eta: &DVector<T>) -> Result<()> {
    if eta.len() != d {
        return Err(SparseArdError::DimensionMismatch { what: "eta", expected: d, found: eta.len() });
    }
    for &e in eta.iter() {
        if !e.is_finite() {
            return Err(SparseArdError::NonFinite("eta"));
        }
        if e < T::zero() {
            return Err(SparseArdError::InvalidParameter {
                name: "eta",
                value: to_f64(e),
                reason: "lasso weights must be nonnegative",
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RescaleMode {
    /// Zero-weight coordinates stay unscaled and unpenalized.
    #[default]
    ExcludeZeroWeights,
    /// Every coordinate must carry a positive weight.
    RequireAllPenalized,
}

/// Unit-weight lasso equivalent to a weighted one: column `i` of `design` is
/// `Θ_i/η_i` for penalized coordinates, and the solution maps back by `ξ = ζ/η`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledLasso<T: Real> {
    pub design: DMatrix<T>,
    pub eta: DVector<T>,
    pub penalized: Vec<bool>,
}

impl<T: Real> RescaledLasso<T> {
    /// Weights of the rescaled problem: 1 on penalized coordinates, 0 elsewhere.
    pub fn unit_weights(&self) -> DVector<T> {
        DVector::from_fn(self.eta.len(), |i, _| if self.penalized[i] { T::one() } else { T::zero() })
    }

    pub fn back_map(&self, zeta: &DVector<T>) -> DVector<T> {
        DVector::from_fn(zeta.len(), |i, _| if self.penalized[i] { zeta[i] / self.eta[i] } else { zeta[i] })
    }

    pub fn forward_map(&self, xi: &DVector<T>) -> DVector<T> {
        DVector::from_fn(xi.len(), |i, _| if self.penalized[i] { xi[i] * self.eta[i] } else { xi[i] })
    }
}

pub fn rescale_to_standard_lasso<T: Real>(
    problem: &RegressionProblem<T>,
    eta: &DVector<T>,
    mode: RescaleMode,
) -> Result<RescaledLasso<T>> {
    check_eta(problem.d(), eta)?;
    let mut design = problem.theta().clone();
    let mut penalized = vec![false; eta.len()];
    for i in 0..eta.len() {
        if eta[i] > T::zero() {
            penalized[i] = true;
            design.column_mut(i).unscale_mut(eta[i]);
        } else if mode == RescaleMode::RequireAllPenalized {
            return Err(SparseArdError::DegenerateWeight { index: i });
        }
    }
    Ok(RescaledLasso { design, eta: eta.clone(), penalized })
}

/// Lasso data in Gram form: minimize `ξᵀGξ − 2bᵀξ + Σ η_i|ξ_i|`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GramLasso<'a, T: Real> {
    pub gram: &'a DMatrix<T>,
    pub xty: &'a DVector<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct GramSolution<T: Real> {
    pub xi: DVector<T>,
    pub iterations: usize,
}

/// Solves the Gram-form weighted lasso. Columns with a zero diagonal are held
/// at zero. `tol` is the per-coordinate KKT tolerance on the gradient
/// `2(Gξ − b)`.
pub(crate) fn lasso_gram<T: Real>(
    gl: GramLasso<'_, T>,
    eta: &DVector<T>,
    tol: &DVector<T>,
    method: LassoMethod,
    options: &LassoOptions,
    warm: Option<&DVector<T>>,
) -> Result<GramSolution<T>> {
    let d = eta.len();
    match method {
        LassoMethod::CoordinateDescent => {
            let mut xi = warm.cloned().unwrap_or_else(|| DVector::zeros(d));
            let sweeps = coordinate_descent(gl, eta, tol, &mut xi, options.max_sweeps)?;
            Ok(GramSolution { xi, iterations: sweeps })
        }
        LassoMethod::Lars => {
            let max_steps = options.max_lars_steps.unwrap_or(10 * d.max(1));
            let (mut xi, steps) = lars(gl, eta, max_steps);
            let gx = gl.gram * &xi;
            if kkt_satisfied(gl, eta, tol, &xi, &gx) {
                return Ok(GramSolution { xi, iterations: steps });
            }
            if let Ok(rounds) = feature_sign(gl, eta, tol, &mut xi, 50 * d.max(1)) {
                return Ok(GramSolution { xi, iterations: steps + rounds });
            }
            let sweeps = coordinate_descent(gl, eta, tol, &mut xi, options.max_sweeps)?;
            Ok(GramSolution { xi, iterations: steps + sweeps })
        }
    }
}

fn lasso_objective<T: Real>(gl: GramLasso<'_, T>, eta: &DVector<T>, xi: &DVector<T>, idx: &[usize]) -> T {
    let two: T = cast(2.0);
    let mut f = T::zero();
    for &i in idx {
        if xi[i] == T::zero() {
            continue;
        }
        let gx: T = idx.iter().fold(T::zero(), |s, &j| s + gl.gram[(i, j)] * xi[j]);
        f += xi[i] * gx - two * gl.xty[i] * xi[i] + eta[i] * xi[i].abs();
    }
    f
}

/// Feature-sign search: exact active-set refinement from a warm start.
/// Each round solves the stationarity system on the current sign pattern
/// and line-searches over the zero crossings towards it.
fn feature_sign<T: Real>(
    gl: GramLasso<'_, T>,
    eta: &DVector<T>,
    tol: &DVector<T>,
    xi: &mut DVector<T>,
    max_rounds: usize,
) -> Result<usize> {
    let d = eta.len();
    let g = gl.gram;
    let two: T = cast(2.0);
    let half: T = cast(0.5);
    for j in 0..d {
        if g[(j, j)] <= T::zero() {
            xi[j] = T::zero();
        }
    }
    let mut signs: Vec<T> = xi.iter().map(|&v| sign0(v)).collect();
    let mut active: Vec<usize> = (0..d).filter(|&j| xi[j] != T::zero()).collect();
    for round in 1..=max_rounds {
        let gx = g * &*xi;
        if kkt_satisfied(gl, eta, tol, xi, &gx) {
            return Ok(round - 1);
        }
        let grad = |j: usize| two * (gx[j] - gl.xty[j]);
        let nonzero_optimal = active.iter().all(|&j| (grad(j) + eta[j] * signs[j]).abs() <= tol[j]);
        if nonzero_optimal {
            let entering = (0..d)
                .filter(|&j| xi[j] == T::zero() && g[(j, j)] > T::zero() && !active.contains(&j))
                .map(|j| (j, grad(j).abs() - eta[j] - tol[j]))
                .filter(|&(_, v)| v > T::zero())
                .fold(None, |best: Option<(usize, T)>, x| match best {
                    Some(b) if b.1 >= x.1 => Some(b),
                    _ => Some(x),
                });
            let Some((j, _)) = entering else {
                return Ok(round - 1);
            };
            signs[j] = -grad(j).signum();
            active.push(j);
            active.sort_unstable();
        }

        let k = active.len();
        let g_aa = DMatrix::from_fn(k, k, |a, b| g[(active[a], active[b])]);
        let rhs = DVector::from_fn(k, |a, _| {
            let j = active[a];
            gl.xty[j] - half * eta[j] * signs[j]
        });
        let target = super::cholesky_with_jitter(g_aa)?.solve(&rhs);
        let current = DVector::from_fn(k, |a, _| xi[active[a]]);

        let mut cuts = vec![T::one()];
        for a in 0..k {
            let (c, t) = (current[a], target[a]);
            if c != T::zero() && c.signum() != t.signum() {
                cuts.push(c / (c - t));
            }
        }
        let f0 = lasso_objective(gl, eta, xi, &active);
        let mut best: Option<(T, DVector<T>)> = None;
        let mut trial = xi.clone();
        for &t in &cuts {
            for a in 0..k {
                let v = current[a] + t * (target[a] - current[a]);
                trial[active[a]] = v;
            }
            // Snap the coordinate whose crossing defines this cut.
            for a in 0..k {
                let (c, tv) = (current[a], target[a]);
                if c != T::zero() && c.signum() != tv.signum() && c / (c - tv) == t {
                    trial[active[a]] = T::zero();
                }
            }
            let f = lasso_objective(gl, eta, &trial, &active);
            if best.as_ref().map_or(true, |(fb, _)| f < *fb) {
                best = Some((f, trial.clone()));
            }
        }
        match best {
            Some((f, next)) if f <= f0 => *xi = next,
            _ => break,
        }
        active.retain(|&j| xi[j] != T::zero());
        for j in 0..d {
            signs[j] = sign0(xi[j]);
        }
    }
    let gx = g * &*xi;
    let residual = (0..d).map(|j| to_f64((two * (gx[j] - gl.xty[j])).abs() - eta[j])).fold(0.0, f64::max);
    Err(SparseArdError::MaxIterations { iterations: max_rounds, residual })
}

fn kkt_satisfied<T: Real>(
    gl: GramLasso<'_, T>,
    eta: &DVector<T>,
    tol: &DVector<T>,
    xi: &DVector<T>,
    gx: &DVector<T>,
) -> bool {
    let two: T = cast(2.0);
    (0..eta.len()).all(|j| {
        if gl.gram[(j, j)] <= T::zero() {
            return true;
        }
        let grad = two * (gx[j] - gl.xty[j]);
        if xi[j] > T::zero() {
            (grad + eta[j]).abs() <= tol[j]
        } else if xi[j] < T::zero() {
            (grad - eta[j]).abs() <= tol[j]
        } else {
            grad.abs() <= eta[j] + tol[j]
        }
    })
}

fn sign0<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn soft_threshold<T: Real>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// Cyclic coordinate descent on the Gram form, warm-started from `xi`.
fn coordinate_descent<T: Real>(
    gl: GramLasso<'_, T>,
    eta: &DVector<T>,
    tol: &DVector<T>,
    xi: &mut DVector<T>,
    max_sweeps: usize,
) -> Result<usize> {
    let d = eta.len();
    let g = gl.gram;
    let half: T = cast(0.5);
    for j in 0..d {
        if g[(j, j)] <= T::zero() {
            xi[j] = T::zero();
        }
    }
    let mut gx = g * &*xi;
    for sweep in 1..=max_sweeps {
        for j in 0..d {
            let gjj = g[(j, j)];
            if gjj <= T::zero() {
                continue;
            }
            let rj = gl.xty[j] - gx[j] + gjj * xi[j];
            let new = soft_threshold(rj, eta[j] * half) / gjj;
            let delta = new - xi[j];
            if delta != T::zero() {
                gx.axpy(delta, &g.column(j), T::one());
                xi[j] = new;
            }
        }
        if sweep % 64 == 0 {
            gx = g * &*xi;
        }
        if kkt_satisfied(gl, eta, tol, xi, &gx) {
            gx = g * &*xi;
            if kkt_satisfied(gl, eta, tol, xi, &gx) {
                return Ok(sweep);
            }
        }
    }
    let two: T = cast(2.0);
    let residual = (0..d).map(|j| to_f64((two * (gx[j] - gl.xty[j])).abs() - eta[j])).fold(0.0, f64::max);
    Err(SparseArdError::MaxIterations { iterations: max_sweeps, residual })
}

/// Least-angle homotopy for the weighted problem. Zero-weight coordinates are
/// eliminated by least squares, penalized ones rescaled to unit weight, and
/// the unit-weight path followed from `λ = ‖b‖∞` down to `λ = 1/2`.
///
/// Returns the iterate reached, which is exact unless the step cap was hit or
/// a degenerate pivot had to be skipped; the caller checks optimality.
fn lars<T: Real>(gl: GramLasso<'_, T>, eta: &DVector<T>, max_steps: usize) -> (DVector<T>, usize) {
    let d = eta.len();
    let live = |j: usize| gl.gram[(j, j)] > T::zero();
    let pen: Vec<usize> = (0..d).filter(|&j| live(j) && eta[j] > T::zero()).collect();
    let unpen: Vec<usize> = (0..d).filter(|&j| live(j) && eta[j] <= T::zero()).collect();
    let p = pen.len();
    let u = unpen.len();

    let g_pp = DMatrix::from_fn(p, p, |a, b| gl.gram[(pen[a], pen[b])]);
    let b_p = DVector::from_fn(p, |a, _| gl.xty[pen[a]]);
    let (g_red, b_red, back) = if u == 0 {
        (g_pp, b_p, None)
    } else {
        let g_uu = DMatrix::from_fn(u, u, |a, b| gl.gram[(unpen[a], unpen[b])]);
        let g_up = DMatrix::from_fn(u, p, |a, b| gl.gram[(unpen[a], pen[b])]);
        let b_u = DVector::from_fn(u, |a, _| gl.xty[unpen[a]]);
        let eps = T::default_epsilon() * from_usize::<T>(u) * g_uu.amax();
        let pinv = g_uu.clone().pseudo_inverse(eps).unwrap_or_else(|_| DMatrix::zeros(u, u));
        let k = &pinv * &g_up;
        let g_red = &g_pp - g_up.tr_mul(&k);
        let b_red = &b_p - k.tr_mul(&b_u);
        (g_red, b_red, Some((pinv, g_up, b_u)))
    };

    let eta_p = DVector::from_fn(p, |a, _| eta[pen[a]]);
    let gh = DMatrix::from_fn(p, p, |a, b| g_red[(a, b)] / (eta_p[a] * eta_p[b]));
    let bh = DVector::from_fn(p, |a, _| b_red[a] / eta_p[a]);
    let (zeta, steps) = lars_unit(&gh, &bh, max_steps);

    let mut xi = DVector::zeros(d);
    let xi_p = DVector::from_fn(p, |a, _| zeta[a] / eta_p[a]);
    for (a, &j) in pen.iter().enumerate() {
        xi[j] = xi_p[a];
    }
    if let Some((pinv, g_up, b_u)) = back {
        let xi_u = &pinv * (b_u - &g_up * &xi_p);
        for (a, &j) in unpen.iter().enumerate() {
            xi[j] = xi_u[a];
        }
    }
    (xi, steps)
}

/// Growing Cholesky factor of the active Gram block.
struct ActiveCholesky<T: Real> {
    l: DMatrix<T>,
    k: usize,
}

impl<T: Real> ActiveCholesky<T> {
    fn new(cap: usize) -> Self {
        Self { l: DMatrix::zeros(cap, cap), k: 0 }
    }

    fn forward(&self, rhs: &mut [T]) {
        for i in 0..self.k {
            let mut s = rhs[i];
            for j in 0..i {
                s -= self.l[(i, j)] * rhs[j];
            }
            rhs[i] = s / self.l[(i, i)];
        }
    }

    fn backward(&self, rhs: &mut [T]) {
        for i in (0..self.k).rev() {
            let mut s = rhs[i];
            for j in i + 1..self.k {
                s -= self.l[(j, i)] * rhs[j];
            }
            rhs[i] = s / self.l[(i, i)];
        }
    }

    /// Appends a column; returns false (leaving the factor untouched) when the
    /// new pivot is numerically zero.
    fn push(&mut self, g: &DMatrix<T>, active: &[usize], j: usize) -> bool {
        let mut z: Vec<T> = active.iter().map(|&a| g[(a, j)]).collect();
        self.forward(&mut z);
        let diag = g[(j, j)];
        let pivot2 = diag - z.iter().fold(T::zero(), |s, &v| s + v * v);
        let min_pivot: T = cast::<T>(1e-11) * diag;
        if !(pivot2 > min_pivot) {
            return false;
        }
        let k = self.k;
        for (i, &v) in z.iter().enumerate() {
            self.l[(k, i)] = v;
        }
        self.l[(k, k)] = pivot2.sqrt();
        self.k += 1;
        true
    }

    fn rebuild(&mut self, g: &DMatrix<T>, active: &mut Vec<usize>, signs: &mut Vec<T>) {
        self.k = 0;
        let old_active = std::mem::take(active);
        let old_signs = std::mem::take(signs);
        for (&j, &s) in old_active.iter().zip(old_signs.iter()) {
            let current = active.clone();
            if self.push(g, &current, j) {
                active.push(j);
                signs.push(s);
            }
        }
    }
}

/// Unit-weight homotopy: minimize `ζᵀGζ − 2bᵀζ + Σ|ζ_i|`.
fn lars_unit<T: Real>(g: &DMatrix<T>, b: &DVector<T>, max_steps: usize) -> (DVector<T>, usize) {
    let p = b.len();
    let half: T = cast(0.5);
    let mut zeta = DVector::<T>::zeros(p);
    if p == 0 {
        return (zeta, 0);
    }
    let mut corr = b.clone();
    let (first, lambda0) =
        corr.iter()
            .enumerate()
            .map(|(i, &c)| (i, c.abs()))
            .fold((0, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
    let mut lambda = lambda0;
    if lambda <= half {
        return (zeta, 0);
    }
    let mut chol = ActiveCholesky::new(p);
    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<T> = Vec::new();
    let mut in_active = vec![false; p];
    let mut blocked = vec![false; p];
    if chol.push(g, &active, first) {
        active.push(first);
        signs.push(corr[first].signum());
        in_active[first] = true;
    } else {
        return (zeta, 0);
    }
    let mut just_dropped: Option<usize> = None;
    let tiny = T::default_epsilon();

    for step in 1..=max_steps {
        let k = active.len();
        let mut w: Vec<T> = signs.clone();
        chol.forward(&mut w);
        chol.backward(&mut w);
        let mut a = DVector::<T>::zeros(p);
        for (idx, &j) in active.iter().enumerate() {
            a.axpy(w[idx], &g.column(j), T::one());
        }

        let mut best = lambda - half;
        let mut event = Event::End;
        for j in 0..p {
            if in_active[j] || blocked[j] || Some(j) == just_dropped {
                continue;
            }
            let one = T::one();
            for (num, den) in [(lambda - corr[j], one - a[j]), (lambda + corr[j], one + a[j])] {
                if den > tiny {
                    let delta = num / den;
                    if delta > T::zero() && delta < best {
                        best = delta;
                        event = Event::Join(j);
                    }
                }
            }
        }
        for idx in 0..k {
            let j = active[idx];
            if w[idx] != T::zero() {
                let delta = -zeta[j] / w[idx];
                if delta > T::zero() && delta < best {
                    best = delta;
                    event = Event::Drop(idx);
                }
            }
        }

        for (idx, &j) in active.iter().enumerate() {
            zeta[j] += best * w[idx];
        }
        lambda -= best;
        corr.copy_from(b);
        for &j in &active {
            corr.axpy(-zeta[j], &g.column(j), T::one());
        }
        just_dropped = None;

        match event {
            Event::End => return (zeta, step),
            Event::Join(j) => {
                if chol.push(g, &active, j) {
                    active.push(j);
                    signs.push(corr[j].signum());
                    in_active[j] = true;
                } else {
                    blocked[j] = true;
                }
            }
            Event::Drop(idx) => {
                let j = active.remove(idx);
                signs.remove(idx);
                zeta[j] = T::zero();
                in_active[j] = false;
                just_dropped = Some(j);
                chol.rebuild(g, &mut active, &mut signs);
                for j in 0..p {
                    in_active[j] = false;
                }
                for &j in &active {
                    in_active[j] = true;
                }
            }
        }
        if active.is_empty() {
            return (zeta, step);
        }
    }
    (zeta, max_steps)
}

#[derive(Debug, Clone, Copy)]
enum Event {
    End,
    Join(usize),
    Drop(usize),
}
