//! Scoring parameter sweeps and comparing learned coefficients with a known truth.

use nalgebra::DVector;

use crate::ard::{negative_log_evidence, ArdFit};
use crate::error::{Result, SparseArdError};
use crate::linops::RegressionProblem;
use crate::scalar::{cast, from_usize, Real};
use crate::sparsifiers::SparseFit;

/// Support and coefficient errors of a learned vector against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportReport<T: Real> {
    /// Learned nonzeros where the truth is zero.
    pub added: usize,
    /// True nonzeros learned as zero.
    pub missed: usize,
    pub l1_error: T,
    pub l2_error: T,
}

pub fn support_report<T: Real>(learned: &DVector<T>, truth: &DVector<T>) -> Result<SupportReport<T>> {
    if learned.len() != truth.len() {
        return Err(SparseArdError::LengthMismatch { left: learned.len(), right: truth.len() });
    }
    let zero = T::zero();
    let mut report = SupportReport { added: 0, missed: 0, l1_error: zero, l2_error: zero };
    let mut sq = zero;
    for (&l, &t) in learned.iter().zip(truth.iter()) {
        match (l != zero, t != zero) {
            (true, false) => report.added += 1,
            (false, true) => report.missed += 1,
            _ => {}
        }
        report.l1_error += (l - t).abs();
        sq += (l - t) * (l - t);
    }
    report.l2_error = sq.sqrt();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aicc,
    Oracle,
}

/// Whether the small-sample term `2k(k+1)/(m−k−1)` is added to AIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AiccMode {
    #[default]
    Corrected,
    Plain,
}

/// One row of a selection table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate<T: Real> {
    pub param: T,
    pub score: T,
    pub support_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome<T: Real> {
    pub chosen_index: usize,
    pub chosen_param: T,
    pub score_table: Vec<ScoredCandidate<T>>,
    pub criterion: Criterion,
}

/// `2k + loss + 2k(k+1)/(m−k−1)`, or `+∞` when `m ≤ k + 1` in corrected mode.
pub fn aicc_from_parts<T: Real>(loss: T, k: usize, m: usize, mode: AiccMode) -> T {
    let kf = from_usize::<T>(k);
    let two: T = cast(2.0);
    let aic = two * kf + loss;
    match mode {
        AiccMode::Plain => aic,
        AiccMode::Corrected => {
            if m <= k + 1 {
                return cast::<T>(f64::INFINITY);
            }
            aic + two * kf * (kf + T::one()) / from_usize::<T>(m - k - 1)
        }
    }
}

/// AICc of a fit with `k = ‖γ‖₀ + 1` (the noise variance counts as a
/// parameter) and the negative log evidence at the fit's γ and σ², up to
/// an additive constant. Any penalty on γ is left out.
pub fn aicc_score<T: Real>(problem: &RegressionProblem<T>, fit: &ArdFit<T>, mode: AiccMode) -> Result<T> {
    let k = fit.support_size() + 1;
    if mode == AiccMode::Corrected && problem.m() <= k + 1 {
        return Ok(cast::<T>(f64::INFINITY));
    }
    let at_noise = problem.with_sigma2(fit.sigma2)?;
    let loss = negative_log_evidence(&at_noise, &fit.gamma)?;
    Ok(aicc_from_parts(loss, k, problem.m(), mode))
}

fn require_candidates<T>(candidates: &[T]) -> Result<()> {
    if candidates.is_empty() {
        return Err(SparseArdError::InvalidParameter {
            name: "candidates",
            value: 0.0,
            reason: "selection needs at least one candidate",
        });
    }
    Ok(())
}

fn lexicographic_min<T: Real, K: PartialOrd>(keys: &[K]) -> usize {
    let mut best = 0;
    for (i, key) in keys.iter().enumerate().skip(1) {
        if key < &keys[best] {
            best = i;
        }
    }
    best
}

/// Picks the candidate with the smallest finite AICc; ties go to the
/// smaller support, then the smaller parameter. If no score is finite the
/// smallest support wins.
pub fn aicc_select<T: Real>(
    problem: &RegressionProblem<T>,
    candidates: &[(T, SparseFit<T>)],
    mode: AiccMode,
) -> Result<SelectionOutcome<T>> {
    require_candidates(candidates)?;
    let score_table = candidates
        .iter()
        .map(|(param, fit)| {
            Ok(ScoredCandidate {
                param: *param,
                score: aicc_score(problem, &fit.base, mode)?,
                support_size: fit.base.support_size(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let keys: Vec<(bool, T, usize, T)> = score_table
        .iter()
        .map(|s| {
            let finite = s.score.is_finite();
            (!finite, if finite { s.score } else { T::zero() }, s.support_size, s.param)
        })
        .collect();
    let chosen_index = lexicographic_min::<T, _>(&keys);
    Ok(SelectionOutcome {
        chosen_index,
        chosen_param: score_table[chosen_index].param,
        score_table,
        criterion: Criterion::Aicc,
    })
}

/// Picks the candidate closest to the known coefficients: fewest added plus
/// missed terms, then smallest ℓ² error, then smallest parameter.
pub fn oracle_select<T: Real>(candidates: &[(T, SparseFit<T>)], truth: &DVector<T>) -> Result<SelectionOutcome<T>> {
    require_candidates(candidates)?;
    let reports =
        candidates.iter().map(|(_, fit)| support_report(&fit.base.mu_xi, truth)).collect::<Result<Vec<_>>>()?;
    let keys: Vec<(usize, T, T)> =
        reports.iter().zip(candidates).map(|(r, (param, _))| (r.added + r.missed, r.l2_error, *param)).collect();
    let chosen_index = lexicographic_min::<T, _>(&keys);
    let score_table = reports
        .iter()
        .zip(candidates)
        .map(|(r, (param, fit))| ScoredCandidate {
            param: *param,
            score: from_usize(r.added + r.missed),
            support_size: fit.base.support_size(),
        })
        .collect();
    Ok(SelectionOutcome {
        chosen_index,
        chosen_param: candidates[chosen_index].0,
        score_table,
        criterion: Criterion::Oracle,
    })
}
