//! Sparsity-enhancing variants built on the ARD loop: noise-variance
//! inflation, a concave penalty on γ, and three sequential thresholding
//! schemes that prune and refit on the surviving columns.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::ard::{fit_core, ArdFit, ArdOptions, Regularizer};
use crate::error::{Result, SparseArdError};
use crate::linops::{evidence, to_normalized_gamma, EvidenceRequest, RegressionProblem};
use crate::scalar::{cast, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ard,
    Ardvi,
    Ardr,
    MStsbl,
    LStsbl,
    MapStsbl,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Ard, Method::Ardvi, Method::Ardr, Method::MStsbl, Method::LStsbl, Method::MapStsbl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ard => "ard",
            Method::Ardvi => "ardvi",
            Method::Ardr => "ardr",
            Method::MStsbl => "m_stsbl",
            Method::LStsbl => "l_stsbl",
            Method::MapStsbl => "map_stsbl",
        }
    }

    /// Display label, e.g. `M-STSBL`.
    pub fn label(self) -> &'static str {
        match self {
            Method::Ard => "ARD",
            Method::Ardvi => "ARDvi",
            Method::Ardr => "ARDr",
            Method::MStsbl => "M-STSBL",
            Method::LStsbl => "L-STSBL",
            Method::MapStsbl => "MAP-STSBL",
        }
    }

    pub fn is_thresholding(self) -> bool {
        matches!(self, Method::MStsbl | Method::LStsbl | Method::MapStsbl)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SparseArdError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| SparseArdError::Domain(format!("unknown method `{s}`")))
    }
}

/// How the ARDr penalty slope scales with the noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyScale {
    /// `g(γ) = λ·min{γ, w}`.
    #[default]
    Plain,
    /// `g(γ) = λσ⁻²·min{γ, w}`.
    NoiseScaled,
}

/// Capped linear penalty `g(γ) = λ·s·min{γ, w}` with `s = 1` or `σ⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CappedLinear<T: Real> {
    pub lambda: T,
    pub width: T,
    pub scale: PenaltyScale,
}

impl<T: Real> CappedLinear<T> {
    fn factor(&self, sigma2: T) -> T {
        match self.scale {
            PenaltyScale::Plain => self.lambda,
            PenaltyScale::NoiseScaled => self.lambda / sigma2,
        }
    }
}

impl<T: Real> Regularizer<T> for CappedLinear<T> {
    fn value(&self, gamma: T, sigma2: T) -> T {
        if self.lambda == T::zero() {
            return T::zero();
        }
        self.factor(sigma2) * gamma.min(self.width)
    }

    fn slope(&self, gamma: T, sigma2: T) -> T {
        if gamma <= self.width {
            self.factor(sigma2)
        } else {
            T::zero()
        }
    }
}

/// Which variant to run and its parameter. Only the fields the method uses are read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsifierSpec<T: Real> {
    pub method: Method,
    pub alpha: T,
    pub lambda: T,
    pub eta_width: T,
    pub penalty_scale: PenaltyScale,
    pub tau: T,
}

impl<T: Real> SparsifierSpec<T> {
    fn base(method: Method) -> Self {
        Self {
            method,
            alpha: T::one(),
            lambda: T::zero(),
            eta_width: cast(f64::INFINITY),
            penalty_scale: PenaltyScale::Plain,
            tau: T::zero(),
        }
    }

    pub fn ard() -> Self {
        Self::base(Method::Ard)
    }

    pub fn ardvi(alpha: T) -> Self {
        Self { alpha, ..Self::base(Method::Ardvi) }
    }

    pub fn ardr(lambda: T, eta_width: T, penalty_scale: PenaltyScale) -> Self {
        Self { lambda, eta_width, penalty_scale, ..Self::base(Method::Ardr) }
    }

    pub fn m_stsbl(tau: T) -> Self {
        Self { tau, ..Self::base(Method::MStsbl) }
    }

    pub fn l_stsbl(tau: T) -> Self {
        Self { tau, ..Self::base(Method::LStsbl) }
    }

    pub fn map_stsbl(tau: T) -> Self {
        Self { tau, ..Self::base(Method::MapStsbl) }
    }

    /// The swept parameter: α, λ or τ (zero for plain ARD).
    pub fn param(&self) -> T {
        match self.method {
            Method::Ard => T::zero(),
            Method::Ardvi => self.alpha,
            Method::Ardr => self.lambda,
            _ => self.tau,
        }
    }

    /// Same method with the swept parameter replaced.
    pub fn with_param(mut self, value: T) -> Self {
        match self.method {
            Method::Ard => {}
            Method::Ardvi => self.alpha = value,
            Method::Ardr => self.lambda = value,
            _ => self.tau = value,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, value: T, reason| Err(SparseArdError::InvalidParameter { name, value: to_f64(value), reason });
        match self.method {
            Method::Ard => Ok(()),
            Method::Ardvi if !(self.alpha >= T::one() && self.alpha.is_finite()) => {
                bad("alpha", self.alpha, "inflation factor must be finite and at least 1")
            }
            Method::Ardr if !(self.lambda >= T::zero() && self.lambda.is_finite()) => {
                bad("lambda", self.lambda, "penalty strength must be finite and nonnegative")
            }
            Method::Ardr if !(self.eta_width > T::zero()) => {
                bad("eta_width", self.eta_width, "penalty width must be positive")
            }
            Method::MStsbl | Method::LStsbl | Method::MapStsbl if !(self.tau >= T::zero() && self.tau.is_finite()) => {
                bad("tau", self.tau, "threshold must be finite and nonnegative")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseFit<T: Real> {
    /// Final fit expanded to all columns; pruned columns have `γ = 0`.
    pub base: ArdFit<T>,
    /// `(depth, columns pruned at that depth)` for each thresholding round.
    pub pruned_history: Vec<(usize, Vec<usize>)>,
    pub recursion_depth: usize,
    /// A reweighting entry was nonpositive and clamped.
    pub clamped: bool,
}

impl<T: Real> SparseFit<T> {
    fn plain(base: ArdFit<T>, clamped: bool) -> Self {
        Self { base, pruned_history: Vec::new(), recursion_depth: 0, clamped }
    }

    pub fn support(&self) -> Vec<usize> {
        self.base.support()
    }
}

/// Runs the variant described by `spec`.
pub fn fit<T: Real>(
    problem: &RegressionProblem<T>,
    spec: &SparsifierSpec<T>,
    options: &ArdOptions<T>,
) -> Result<SparseFit<T>> {
    fit_from(problem, spec, options, None)
}

/// As [`fit`], reusing an existing plain ARD fit of `problem` (same options)
/// where the variant starts from one.
pub fn fit_from<T: Real>(
    problem: &RegressionProblem<T>,
    spec: &SparsifierSpec<T>,
    options: &ArdOptions<T>,
    ard: Option<&ArdFit<T>>,
) -> Result<SparseFit<T>> {
    spec.validate()?;
    match spec.method {
        Method::Ard => match ard {
            Some(f) => Ok(SparseFit::plain(f.clone(), false)),
            None => Ok(SparseFit::plain(fit_core(problem, options, T::one(), None)?.0, false)),
        },
        Method::Ardvi => fit_ardvi(problem, spec.alpha, options),
        Method::Ardr => {
            let reg = CappedLinear { lambda: spec.lambda, width: spec.eta_width, scale: spec.penalty_scale };
            fit_ardr_with(problem, &reg, options, ard)
        }
        Method::MStsbl => threshold_fit(problem, Threshold::Magnitude(spec.tau), options, ard),
        Method::LStsbl => threshold_fit(problem, Threshold::Density(spec.tau), options, ard),
        Method::MapStsbl => threshold_fit(problem, Threshold::Map(spec.tau), options, ard),
    }
}

/// ARD with σ² inflated by `alpha` in the reweighting and lasso steps.
pub fn fit_ardvi<T: Real>(problem: &RegressionProblem<T>, alpha: T, options: &ArdOptions<T>) -> Result<SparseFit<T>> {
    SparsifierSpec::ardvi(alpha).validate()?;
    let (base, flags) = fit_core(problem, options, alpha, None)?;
    Ok(SparseFit::plain(base, flags.clamped))
}

/// ARD with the capped linear penalty `λ·s·min{γ, eta_width}` on each γ_i,
/// started from the plain ARD solution.
pub fn fit_ardr<T: Real>(
    problem: &RegressionProblem<T>,
    lambda: T,
    eta_width: T,
    scale: PenaltyScale,
    options: &ArdOptions<T>,
) -> Result<SparseFit<T>> {
    let spec = SparsifierSpec::ardr(lambda, eta_width, scale);
    spec.validate()?;
    fit_from(problem, &spec, options, None)
}

/// ARDr with an arbitrary separable penalty. Entries of `c` that the penalty
/// drives nonpositive are clamped to 1e-12 and reported in [`SparseFit::clamped`].
pub fn fit_ardr_with<T: Real>(
    problem: &RegressionProblem<T>,
    reg: &dyn Regularizer<T>,
    options: &ArdOptions<T>,
    ard: Option<&ArdFit<T>>,
) -> Result<SparseFit<T>> {
    let start = match ard {
        Some(f) => f.clone(),
        None => fit_core(problem, options, T::one(), None)?.0,
    };
    let warm = ArdOptions { gamma_init: Some(start.gamma.clone()), ..options.clone() };
    let source = if options.relearn_noise { problem.with_sigma2(start.sigma2)? } else { problem.clone() };
    let (mut base, flags) = fit_core(&source, &warm, T::one(), Some(reg))?;
    base.iterations += start.iterations;
    Ok(SparseFit::plain(base, flags.clamped))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Threshold<T: Real> {
    /// Prune `|μ_i| < τ`.
    Magnitude(T),
    /// Prune when the posterior density at zero exceeds τ.
    Density(T),
    /// Prune `μ_i²/(2Σ_ii) < τ`.
    Map(T),
}

impl<T: Real> Threshold<T> {
    /// Coordinates with `γ_i = 0` carry a point mass at zero: they count as
    /// pruned by every rule with a positive threshold, and by the density
    /// and MAP rules at any threshold.
    fn prunes(&self, gamma: T, mu: T, var: T) -> bool {
        let zero = T::zero();
        if gamma <= zero {
            return match *self {
                Threshold::Magnitude(tau) => tau > zero,
                Threshold::Density(_) | Threshold::Map(_) => true,
            };
        }
        match *self {
            Threshold::Magnitude(tau) => mu.abs() < tau,
            Threshold::Density(tau) => {
                if !(var > zero) {
                    return mu == zero;
                }
                if tau <= zero {
                    return true;
                }
                let two_pi: T = T::two_pi();
                let log_density = -(two_pi * var).ln() / cast(2.0) - mu * mu / (var + var);
                log_density > tau.ln()
            }
            Threshold::Map(tau) => {
                if !(var > zero) {
                    return mu == zero && tau > zero;
                }
                mu * mu / (var + var) < tau
            }
        }
    }
}

fn threshold_fit<T: Real>(
    problem: &RegressionProblem<T>,
    rule: Threshold<T>,
    options: &ArdOptions<T>,
    ard: Option<&ArdFit<T>>,
) -> Result<SparseFit<T>> {
    let d = problem.d();
    let cold = ArdOptions { gamma_init: None, ..options.clone() };
    let mut fit = match ard {
        Some(f) => f.clone(),
        None => fit_core(problem, options, T::one(), None)?.0,
    };
    let mut columns: Vec<usize> = (0..d).collect();
    let mut history = Vec::new();
    let mut iterations = fit.iterations;
    loop {
        let (pruned, kept): (Vec<usize>, Vec<usize>) =
            (0..columns.len()).partition(|&i| rule.prunes(fit.gamma[i], fit.mu_xi[i], fit.sigma_xi_diag[i]));
        if pruned.is_empty() {
            break;
        }
        history.push((history.len() + 1, pruned.iter().map(|&i| columns[i]).collect::<Vec<_>>()));
        columns = kept.iter().map(|&i| columns[i]).collect();
        if columns.is_empty() {
            fit = empty_fit(fit.sigma2, fit.loss_trace.clone());
            break;
        }
        let sub = problem.select_columns(&columns).with_sigma2(fit.sigma2)?;
        fit = fit_core(&sub, &cold, T::one(), None)?.0;
        iterations += fit.iterations;
    }
    let mut base = expand(problem, &columns, fit)?;
    base.iterations = iterations;
    Ok(SparseFit { base, recursion_depth: history.len(), pruned_history: history, clamped: false })
}

fn empty_fit<T: Real>(sigma2: T, loss_trace: Vec<T>) -> ArdFit<T> {
    ArdFit {
        gamma: DVector::zeros(0),
        mu_xi: DVector::zeros(0),
        sigma_xi_diag: DVector::zeros(0),
        sigma_xi_full: None,
        c: DVector::zeros(0),
        eta: DVector::zeros(0),
        sigma2,
        loss_trace,
        iterations: 0,
        converged: true,
    }
}

/// Embeds a fit on `columns` into the full problem, recomputing the
/// reweighting vector for every column.
fn expand<T: Real>(problem: &RegressionProblem<T>, columns: &[usize], fit: ArdFit<T>) -> Result<ArdFit<T>> {
    let d = problem.d();
    if columns.len() == d {
        return Ok(fit);
    }
    let mut gamma = DVector::zeros(d);
    let mut mu_xi = DVector::zeros(d);
    let mut sigma_xi_diag = DVector::zeros(d);
    for (a, &i) in columns.iter().enumerate() {
        gamma[i] = fit.gamma[a];
        mu_xi[i] = fit.mu_xi[a];
        sigma_xi_diag[i] = fit.sigma_xi_diag[a];
    }
    let sigma_xi_full = fit.sigma_xi_full.as_ref().map(|s| {
        let mut out = DMatrix::zeros(d, d);
        for (a, &i) in columns.iter().enumerate() {
            for (b, &j) in columns.iter().enumerate() {
                out[(i, j)] = s[(a, b)];
            }
        }
        out
    });
    let norm = problem.normalized();
    let gn = to_normalized_gamma(norm, &gamma);
    let ev = evidence(norm, &gn, fit.sigma2, EvidenceRequest { c: true, full_covariance: false })?;
    let two: T = cast(2.0);
    let c = DVector::from_fn(d, |i, _| {
        let s = norm.scale[i];
        if s > T::zero() {
            ev.c[i] / (s * s)
        } else {
            T::zero()
        }
    });
    let eta = c.map(|ci| two * fit.sigma2 * ci.sqrt());
    Ok(ArdFit {
        gamma,
        mu_xi,
        sigma_xi_diag,
        sigma_xi_full,
        c,
        eta,
        sigma2: fit.sigma2,
        loss_trace: fit.loss_trace,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

/// Outcome of checking that every coordinate inside the ARDr pruning band
/// ends at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningBandCheck<T: Real> {
    pub fit: SparseFit<T>,
    /// Coordinates inside the band that kept a nonzero coefficient.
    pub counterexamples: Vec<usize>,
    /// Coordinates inside the band.
    pub in_band: usize,
}

impl<T: Real> PruningBandCheck<T> {
    pub fn holds(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// For a design with orthogonal columns, fits ARDr with the uncapped linear
/// penalty `λγ` and checks that every coordinate whose effective measurement
/// `ρ_i⁻¹Θ_iᵀy` lies within `±√(σ²/ρ_i + λσ⁴/ρ_i²)` is zero at the fixed point.
pub fn verify_pruning_band<T: Real>(
    problem: &RegressionProblem<T>,
    lambda: T,
    options: &ArdOptions<T>,
) -> Result<PruningBandCheck<T>> {
    let gram = problem.theta().tr_mul(problem.theta());
    let diag_scale = gram.diagonal().amax().max(T::one());
    let off = (0..gram.nrows())
        .flat_map(|i| (0..gram.ncols()).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .fold(T::zero(), |m, (i, j)| m.max(gram[(i, j)].abs()));
    if off > cast::<T>(1e-8) * diag_scale {
        return Err(SparseArdError::InvalidParameter {
            name: "theta",
            value: to_f64(off),
            reason: "pruning-band check needs orthogonal columns",
        });
    }
    let fit = fit_ardr(problem, lambda, cast(f64::INFINITY), PenaltyScale::Plain, options)?;
    let s2 = problem.sigma2();
    let xty = problem.theta().tr_mul(problem.y());
    let mut counterexamples = Vec::new();
    let mut in_band = 0;
    for i in 0..problem.d() {
        let rho = problem.rho()[i];
        if rho <= T::zero() {
            continue;
        }
        let measured = xty[i] / rho;
        let band = (s2 / rho + lambda * s2 * s2 / (rho * rho)).sqrt();
        if measured.abs() <= band {
            in_band += 1;
            if fit.base.mu_xi[i] != T::zero() {
                counterexamples.push(i);
            }
        }
    }
    Ok(PruningBandCheck { fit, counterexamples, in_band })
}
