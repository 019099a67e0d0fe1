//! Synthetic data: Lorenz systems, the Kuramoto–Sivashinsky equation,
//! measurement noise and row subsampling.

mod ks;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SparseArdError};
use crate::features::polynomial_exponents;
use crate::scalar::{cast, from_usize, Real};

pub use ks::{ks_grid, ks_initial_condition, ks_true_coefficients, simulate_ks, simulate_ks_from, KsParams};

/// Random stream for one trial: the experiment seed picks the key and the
/// trial index picks the stream, so trials can run in any order.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub(crate) fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    cast(rng.sample::<f64, _>(StandardNormal))
}

/// A state time series, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset<T: Real> {
    pub x: DMatrix<T>,
    pub clean_x: DMatrix<T>,
    pub dt: T,
    pub noise_sigma: T,
    pub seed: Option<u64>,
}

impl<T: Real> TrajectoryDataset<T> {
    fn clean(x: DMatrix<T>, dt: T) -> Self {
        Self { clean_x: x.clone(), x, dt, noise_sigma: T::zero(), seed: None }
    }

    /// Adds Gaussian noise with standard deviation `percent`% of the pooled
    /// standard deviation of the clean series, drawn from `trial_rng(seed, 0)`.
    pub fn with_noise(&self, percent: T, seed: u64) -> Result<Self> {
        let (x, noise_sigma) = add_noise(&self.clean_x, percent, &mut trial_rng(seed, 0))?;
        Ok(Self { x, clean_x: self.clean_x.clone(), dt: self.dt, noise_sigma, seed: Some(seed) })
    }
}

fn check_dt<T: Real>(dt: T) -> Result<()> {
    if !(dt > T::zero() && dt.is_finite()) {
        return Err(SparseArdError::InvalidParameter {
            name: "dt",
            value: crate::scalar::to_f64(dt),
            reason: "time step must be positive and finite",
        });
    }
    Ok(())
}

/// Classical fourth-order Runge–Kutta; returns `steps + 1` rows.
pub fn rk4<T: Real>(
    rhs: impl Fn(&DVector<T>) -> DVector<T>,
    ic: &DVector<T>,
    dt: T,
    steps: usize,
) -> Result<DMatrix<T>> {
    check_dt(dt)?;
    let n = ic.len();
    let mut out = DMatrix::zeros(steps + 1, n);
    out.row_mut(0).copy_from(&ic.transpose());
    let half: T = cast(0.5);
    let sixth: T = cast(1.0 / 6.0);
    let two: T = cast(2.0);
    let mut x = ic.clone();
    for step in 1..=steps {
        let k1 = rhs(&x);
        let k2 = rhs(&(&x + &k1 * (half * dt)));
        let k3 = rhs(&(&x + &k2 * (half * dt)));
        let k4 = rhs(&(&x + &k3 * dt));
        x += (k1 + (k2 + k3) * two + k4) * (sixth * dt);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SparseArdError::NonFinite("trajectory"));
        }
        out.row_mut(step).copy_from(&x.transpose());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz63<T: Real> {
    pub s: T,
    pub rho: T,
    pub beta: T,
}

impl<T: Real> Default for Lorenz63<T> {
    fn default() -> Self {
        Self { s: cast(10.0), rho: cast(28.0), beta: cast(8.0 / 3.0) }
    }
}

impl<T: Real> Lorenz63<T> {
    pub fn rhs(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_vec(vec![self.s * (x[1] - x[0]), x[0] * (self.rho - x[2]) - x[1], x[0] * x[1] - self.beta * x[2]])
    }

    /// Coefficients of the vector field in the polynomial library of the
    /// given degree (rows follow the library's column order).
    pub fn true_coefficients(&self, degree: usize) -> DMatrix<T> {
        let exps = polynomial_exponents(3, degree);
        let mut xi = DMatrix::zeros(exps.len(), 3);
        let mut set = |e: [usize; 3], eq: usize, v: T| {
            if let Some(i) = exps.iter().position(|x| x[..] == e[..]) {
                xi[(i, eq)] = v;
            }
        };
        set([1, 0, 0], 0, -self.s);
        set([0, 1, 0], 0, self.s);
        set([1, 0, 0], 1, self.rho);
        set([0, 1, 0], 1, -T::one());
        set([1, 0, 1], 1, -T::one());
        set([1, 1, 0], 2, T::one());
        set([0, 0, 1], 2, -self.beta);
        xi
    }
}

/// Initial condition drawn from `N((0, 0, 15), 25·I)`.
pub fn lorenz63_initial_condition<T: Real, R: Rng + ?Sized>(rng: &mut R) -> DVector<T> {
    let mean = [0.0, 0.0, 15.0];
    DVector::from_fn(3, |i, _| cast::<T>(mean[i]) + cast::<T>(5.0) * normal::<T, R>(rng))
}

pub fn simulate_lorenz63<T: Real>(
    params: &Lorenz63<T>,
    ic: &DVector<T>,
    dt: T,
    steps: usize,
) -> Result<TrajectoryDataset<T>> {
    if ic.len() != 3 {
        return Err(SparseArdError::DimensionMismatch {
            what: "lorenz63 initial condition",
            expected: 3,
            found: ic.len(),
        });
    }
    Ok(TrajectoryDataset::clean(rk4(|x| params.rhs(x), ic, dt, steps)?, dt))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz96<T: Real> {
    pub n: usize,
    pub forcing: T,
}

impl<T: Real> Default for Lorenz96<T> {
    fn default() -> Self {
        Self { n: 40, forcing: cast(16.0) }
    }
}

impl<T: Real> Lorenz96<T> {
    pub fn rhs(&self, x: &DVector<T>) -> DVector<T> {
        let n = self.n;
        DVector::from_fn(n, |j, _| {
            let (p1, m1, m2) = ((j + 1) % n, (j + n - 1) % n, (j + n - 2) % n);
            (x[p1] - x[m2]) * x[m1] - x[j] + self.forcing
        })
    }

    /// Coefficients in the quadratic (or higher) polynomial library of the
    /// `n` state variables.
    pub fn true_coefficients(&self, degree: usize) -> DMatrix<T> {
        let n = self.n;
        let exps = polynomial_exponents(n, degree);
        let find = |vars: &[usize]| {
            let mut e = vec![0; n];
            for &v in vars {
                e[v] += 1;
            }
            exps.iter().position(|x| *x == e)
        };
        let mut xi = DMatrix::zeros(exps.len(), n);
        for j in 0..n {
            let (p1, m1, m2) = ((j + 1) % n, (j + n - 1) % n, (j + n - 2) % n);
            let mut add = |vars: &[usize], v: T| {
                if let Some(i) = find(vars) {
                    xi[(i, j)] += v;
                }
            };
            add(&[], self.forcing);
            add(&[j], -T::one());
            add(&[p1, m1], T::one());
            add(&[m2, m1], -T::one());
        }
        xi
    }
}

/// `x_j = exp(−(j − n/2)²/16)` for `j = 1..n`.
pub fn lorenz96_initial_condition<T: Real>(n: usize) -> DVector<T> {
    let center = from_usize::<T>(n / 2);
    let sixteenth: T = cast(1.0 / 16.0);
    DVector::from_fn(n, |j, _| {
        let d = from_usize::<T>(j + 1) - center;
        (-(d * d) * sixteenth).exp()
    })
}

pub fn simulate_lorenz96<T: Real>(
    params: &Lorenz96<T>,
    ic: &DVector<T>,
    dt: T,
    steps: usize,
) -> Result<TrajectoryDataset<T>> {
    if params.n < 4 {
        return Err(SparseArdError::InvalidParameter {
            name: "n",
            value: params.n as f64,
            reason: "cyclic coupling needs at least four variables",
        });
    }
    if ic.len() != params.n {
        return Err(SparseArdError::DimensionMismatch {
            what: "lorenz96 initial condition",
            expected: params.n,
            found: ic.len(),
        });
    }
    Ok(TrajectoryDataset::clean(rk4(|x| params.rhs(x), ic, dt, steps)?, dt))
}

/// Population standard deviation of all entries.
pub fn pooled_std<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let n = from_usize::<T>(values.len());
    let mean = values.iter().fold(T::zero(), |a, &v| a + v) / n;
    (values.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n).sqrt()
}

fn check_percent<T: Real>(percent: T) -> Result<()> {
    if !(percent >= T::zero() && percent.is_finite()) {
        return Err(SparseArdError::InvalidParameter {
            name: "percent",
            value: crate::scalar::to_f64(percent),
            reason: "noise level must be finite and nonnegative",
        });
    }
    Ok(())
}

/// Adds iid Gaussian noise with standard deviation `percent`% of the pooled
/// standard deviation of `clean`. Returns the noisy copy and that deviation.
pub fn add_noise<T: Real, R: Rng + ?Sized>(clean: &DMatrix<T>, percent: T, rng: &mut R) -> Result<(DMatrix<T>, T)> {
    check_percent(percent)?;
    let sigma = percent / cast(100.0) * pooled_std(clean.as_slice());
    if sigma == T::zero() {
        return Ok((clean.clone(), sigma));
    }
    Ok((clean.map(|v| v + sigma * normal::<T, R>(rng)), sigma))
}

/// [`add_noise`] for a target vector, scaled by the standard deviation of
/// the target itself.
pub fn add_target_noise<T: Real, R: Rng + ?Sized>(
    clean: &DVector<T>,
    percent: T,
    rng: &mut R,
) -> Result<(DVector<T>, T)> {
    check_percent(percent)?;
    let sigma = percent / cast(100.0) * pooled_std(clean.as_slice());
    if sigma == T::zero() {
        return Ok((clean.clone(), sigma));
    }
    Ok((clean.map(|v| v + sigma * normal::<T, R>(rng)), sigma))
}

/// `k` rows drawn uniformly without replacement, in draw order.
pub fn subsample_rows<T: Real, R: Rng + ?Sized>(
    theta: &DMatrix<T>,
    y: &DVector<T>,
    k: usize,
    rng: &mut R,
) -> Result<(DMatrix<T>, DVector<T>)> {
    let m = theta.nrows();
    if y.len() != m {
        return Err(SparseArdError::DimensionMismatch { what: "targets", expected: m, found: y.len() });
    }
    if k > m {
        return Err(SparseArdError::SampleTooLarge { requested: k, available: m });
    }
    let rows = sample(rng, m, k).into_vec();
    Ok((theta.select_rows(&rows), DVector::from_fn(k, |i, _| y[rows[i]])))
}
