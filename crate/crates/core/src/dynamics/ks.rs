//! Kuramoto–Sivashinsky `u_t + u·u_x + u_xx + u_xxxx = 0` on a periodic
//! domain, integrated in Fourier space by exponential time differencing
//! (ETDRK4) with contour-integral coefficients.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{FftNum, FftPlanner};

use super::check_dt;
use crate::error::{Result, SparseArdError};
use crate::features::{pde_names, MIN_PDE_POINTS};
use crate::scalar::{cast, from_usize, Real};

/// Points on the unit circle used to evaluate the ETDRK4 coefficients.
const CONTOUR_POINTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsParams<T: Real> {
    /// Domain length.
    pub length: T,
    pub n_x: usize,
    pub dt: T,
    pub steps: usize,
}

impl<T: Real> Default for KsParams<T> {
    /// `[0, 32π]` on 512 points, `dt = 0.14` out to `t ≈ 150`.
    fn default() -> Self {
        Self { length: cast(32.0 * std::f64::consts::PI), n_x: 512, dt: cast(0.14), steps: 1071 }
    }
}

impl<T: Real> KsParams<T> {
    /// The default grid with 1024 steps (1025 stored times).
    pub fn with_1024_steps() -> Self {
        Self { steps: 1024, ..Self::default() }
    }

    pub fn dx(&self) -> T {
        self.length / from_usize::<T>(self.n_x)
    }
}

/// Grid points `j·L/n_x`.
pub fn ks_grid<T: Real>(params: &KsParams<T>) -> DVector<T> {
    let dx = params.dx();
    DVector::from_fn(params.n_x, |j, _| from_usize::<T>(j) * dx)
}

/// `u₀(x) = cos(x/16)·(1 + sin(x/16))`.
pub fn ks_initial_condition<T: Real>(x: T) -> T {
    let s = x / cast(16.0);
    s.cos() * (T::one() + s.sin())
}

/// Coefficients of `u_t` in the 25-column PDE library: `−u·u_x − u_xx − u_xxxx`.
pub fn ks_true_coefficients<T: Real>() -> DVector<T> {
    let names = pde_names(4, 4);
    DVector::from_fn(names.len(), |i, _| match names[i].as_str() {
        "u u_x" | "u_xx" | "u_xxxx" => -T::one(),
        _ => T::zero(),
    })
}

/// Field sampled at every step: `n_x` rows, `steps + 1` columns.
pub fn simulate_ks<T: Real + FftNum>(params: &KsParams<T>, ic: impl Fn(T) -> T) -> Result<DMatrix<T>> {
    let u0 = ks_grid(params).map(ic);
    simulate_ks_from(params, &u0)
}

pub fn simulate_ks_from<T: Real + FftNum>(params: &KsParams<T>, u0: &DVector<T>) -> Result<DMatrix<T>> {
    let n = params.n_x;
    check_dt(params.dt)?;
    if n < MIN_PDE_POINTS || !n.is_power_of_two() {
        return Err(SparseArdError::GridTooSmall { points: n, min: MIN_PDE_POINTS.next_power_of_two() });
    }
    if u0.len() != n {
        return Err(SparseArdError::DimensionMismatch { what: "ks initial field", expected: n, found: u0.len() });
    }
    if !(params.length > T::zero() && params.length.is_finite()) {
        return Err(SparseArdError::InvalidParameter {
            name: "length",
            value: crate::scalar::to_f64(params.length),
            reason: "domain length must be positive and finite",
        });
    }
    let mut stepper = Etdrk4::new(params);
    let mut out = DMatrix::zeros(n, params.steps + 1);
    out.column_mut(0).copy_from(u0);
    let mut v: Vec<Complex<T>> = u0.iter().map(|&x| Complex::new(x, T::zero())).collect();
    stepper.forward(&mut v);
    for step in 1..=params.steps {
        stepper.step(&mut v);
        let u = stepper.to_physical(&v);
        if !u.iter().all(|x| x.is_finite()) {
            return Err(SparseArdError::NonFinite("ks field"));
        }
        out.column_mut(step).copy_from_slice(&u);
    }
    Ok(out)
}

fn cexp<T: Real>(z: Complex<T>) -> Complex<T> {
    let r = z.re.exp();
    Complex::new(r * z.im.cos(), r * z.im.sin())
}

struct Etdrk4<T: Real + FftNum> {
    fft: std::sync::Arc<dyn rustfft::Fft<T>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<T>>,
    e: Vec<T>,
    e2: Vec<T>,
    q: Vec<T>,
    f1: Vec<T>,
    f2: Vec<T>,
    f3: Vec<T>,
    /// `−i·k/2`, the nonlinear term's multiplier on `û²`.
    g: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Real + FftNum> Etdrk4<T> {
    fn new(params: &KsParams<T>) -> Self {
        let n = params.n_x;
        let h = params.dt;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let two_pi_over_l = T::two_pi() / params.length;
        let wavenumber = |j: usize| -> T {
            if j < n / 2 {
                from_usize::<T>(j) * two_pi_over_l
            } else if j == n / 2 {
                T::zero()
            } else {
                -(from_usize::<T>(n - j)) * two_pi_over_l
            }
        };
        let k: Vec<T> = (0..n).map(wavenumber).collect();
        let lin: Vec<T> = k.iter().map(|&k| k * k - k * k * k * k).collect();
        let half: T = cast(0.5);
        let roots: Vec<Complex<T>> = (1..=CONTOUR_POINTS)
            .map(|j| {
                let angle = T::pi() * (from_usize::<T>(j) - half) / from_usize::<T>(CONTOUR_POINTS);
                Complex::new(angle.cos(), angle.sin())
            })
            .collect();
        let mean = |f: &dyn Fn(Complex<T>) -> Complex<T>, l: T| -> T {
            let sum = roots.iter().fold(T::zero(), |acc, &r| acc + f(Complex::new(h * l, T::zero()) + r).re);
            h * sum / from_usize::<T>(CONTOUR_POINTS)
        };
        let c = |v: f64| Complex::new(cast::<T>(v), T::zero());
        let q = lin.iter().map(|&l| mean(&|z| (cexp(z * c(0.5)) - c(1.0)) / z, l)).collect();
        let f1 = lin
            .iter()
            .map(|&l| mean(&|z| (c(-4.0) - z + cexp(z) * (c(4.0) - z * c(3.0) + z * z)) / (z * z * z), l))
            .collect();
        let f2 = lin.iter().map(|&l| mean(&|z| (c(2.0) + z + cexp(z) * (c(-2.0) + z)) / (z * z * z), l)).collect();
        let f3 = lin
            .iter()
            .map(|&l| mean(&|z| (c(-4.0) - z * c(3.0) - z * z + cexp(z) * (c(4.0) - z)) / (z * z * z), l))
            .collect();
        Self {
            fft,
            ifft,
            e: lin.iter().map(|&l| (h * l).exp()).collect(),
            e2: lin.iter().map(|&l| (h * l * half).exp()).collect(),
            q,
            f1,
            f2,
            f3,
            g: k.iter().map(|&k| Complex::new(T::zero(), -half * k)).collect(),
            scratch: vec![Complex::new(T::zero(), T::zero()); n],
        }
    }

    fn forward(&self, v: &mut [Complex<T>]) {
        self.fft.process(v);
    }

    fn to_physical(&mut self, v: &[Complex<T>]) -> Vec<T> {
        self.scratch.copy_from_slice(v);
        self.ifft.process(&mut self.scratch);
        let inv = T::one() / from_usize::<T>(v.len());
        self.scratch.iter().map(|z| z.re * inv).collect()
    }

    /// `−(u²)_x/2` in Fourier space.
    fn nonlinear(&mut self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        let u = self.to_physical(v);
        let mut w: Vec<Complex<T>> = u.iter().map(|&x| Complex::new(x * x, T::zero())).collect();
        self.fft.process(&mut w);
        w.iter().zip(&self.g).map(|(a, g)| *a * *g).collect()
    }

    fn step(&mut self, v: &mut [Complex<T>]) {
        let n = v.len();
        let nv = self.nonlinear(v);
        let a: Vec<Complex<T>> = (0..n).map(|j| v[j] * self.e2[j] + nv[j] * self.q[j]).collect();
        let na = self.nonlinear(&a);
        let b: Vec<Complex<T>> = (0..n).map(|j| v[j] * self.e2[j] + na[j] * self.q[j]).collect();
        let nb = self.nonlinear(&b);
        let two: T = cast(2.0);
        let c: Vec<Complex<T>> = (0..n).map(|j| a[j] * self.e2[j] + (nb[j] * two - nv[j]) * self.q[j]).collect();
        let nc = self.nonlinear(&c);
        for j in 0..n {
            v[j] = v[j] * self.e[j] + nv[j] * self.f1[j] + (na[j] + nb[j]) * (two * self.f2[j]) + nc[j] * self.f3[j];
        }
    }
}
