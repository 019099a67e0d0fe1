//! Runs a resolved [`Plan`] and collects the result rows.
//!
//! Work is split into units of one (setting, trial) pair. Each unit draws
//! from its own random stream, `trial_rng(seed, setting << 32 | trial)`, so
//! results do not depend on the number of worker threads or their order.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use sparse_ard::ard::{fit_ard, ArdFit};
use sparse_ard::dynamics::{
    add_noise, ks_initial_condition, ks_true_coefficients, lorenz63_initial_condition, lorenz96_initial_condition,
    pooled_std, simulate_ks, simulate_lorenz63, simulate_lorenz96, subsample_rows, trial_rng, KsParams, Lorenz63,
    Lorenz96,
};
use sparse_ard::features::{finite_difference, pde_library, polynomial_library};
use sparse_ard::rates::{fn_rate, fp_rate, RateQuery};
use sparse_ard::selection::{aicc_select, oracle_select, support_report, AiccMode};
use sparse_ard::sparsifiers::{fit_from, Method, SparseFit};
use sparse_ard::{ArdOptions64, RegressionProblem64, SparseArdError, SparsifierSpec64};

use crate::config::{MethodGrid, Plan, ProblemSetup, ScaleName, SelectionKind};
use crate::problems::{build_fourier_problem, build_linear_problem, observe, orthogonal_design, NoiseLevel};
use crate::records::{aggregate, AgreementRow, ResultBundle, TimingRow, TrialRecord};

/// Stream index reserved for draws shared by every trial of a setting.
const SHARED_STREAM: u64 = 0xFFFF_FFFF;

fn stream(setting: usize, trial: usize) -> u64 {
    ((setting as u64) << 32) | trial as u64
}

#[derive(Debug, thiserror::Error)]
enum TrialError {
    #[error("{0}")]
    Fit(#[from] SparseArdError),
    #[error("timed out after {0:.0} s")]
    Timeout(f64),
}

struct Deadline {
    end: Instant,
    limit: f64,
}

impl Deadline {
    fn new(limit: f64) -> Self {
        Self { end: Instant::now() + Duration::from_secs_f64(limit), limit }
    }

    fn check(&self) -> Result<(), TrialError> {
        if Instant::now() > self.end {
            Err(TrialError::Timeout(self.limit))
        } else {
            Ok(())
        }
    }
}

/// One regression with known coefficients.
struct Task {
    target: String,
    problem: RegressionProblem64,
    truth: DVector<f64>,
}

/// Output of one (setting, trial) unit.
#[derive(Default)]
struct UnitOutput {
    records: Vec<TrialRecord>,
    agreement: Vec<AgreementRow>,
    timings: Vec<TimingRow>,
}

struct Context<'a> {
    plan: &'a Plan,
    setting: String,
    trial: usize,
}

impl Context<'_> {
    fn record(&self, method: &str, param: Option<f64>, target: &str) -> TrialRecord {
        TrialRecord {
            experiment: self.plan.experiment.name().to_string(),
            setting: self.setting.clone(),
            method: method.to_string(),
            param,
            trial: self.trial,
            target: target.to_string(),
            status: "ok".to_string(),
            added: None,
            missed: None,
            l1_error: None,
            l2_error: None,
            support_size: None,
            score: None,
            iterations: None,
            converged: None,
            expected_added: None,
            expected_missed: None,
        }
    }

    fn failure(&self, method: &str, param: Option<f64>, target: &str, err: &dyn std::fmt::Display) -> TrialRecord {
        TrialRecord { status: format!("failed: {err}"), ..self.record(method, param, target) }
    }

    fn options(&self) -> ArdOptions64 {
        ArdOptions64 {
            max_iter: self.plan.max_iter,
            tol: self.plan.tol,
            relearn_noise: self.plan.relearn_noise,
            ..Default::default()
        }
    }

    fn spec(&self, grid: &MethodGrid, param: f64) -> SparsifierSpec64 {
        let base = match grid.method {
            Method::Ard => SparsifierSpec64::ard(),
            Method::Ardvi => SparsifierSpec64::ardvi(param),
            Method::Ardr => SparsifierSpec64::ardr(param, grid.eta_width, grid.penalty_scale.into()),
            Method::MStsbl => SparsifierSpec64::m_stsbl(param),
            Method::LStsbl => SparsifierSpec64::l_stsbl(param),
            Method::MapStsbl => SparsifierSpec64::map_stsbl(param),
        };
        base.with_param(param)
    }
}

fn fill_metrics(rec: &mut TrialRecord, fit: &SparseFit<f64>, truth: &DVector<f64>) -> Result<(), SparseArdError> {
    let report = support_report(&fit.base.mu_xi, truth)?;
    rec.added = Some(report.added);
    rec.missed = Some(report.missed);
    rec.l1_error = Some(report.l1_error);
    rec.l2_error = Some(report.l2_error);
    rec.support_size = Some(fit.base.support_size());
    rec.iterations = Some(fit.base.iterations);
    rec.converged = Some(fit.base.converged);
    Ok(())
}

/// Noise variance the fit starts from: a fraction of `var(y)` when the
/// level is being learned, the generating variance otherwise.
fn working_problem(
    plan: &Plan,
    problem: RegressionProblem64,
    known: Option<f64>,
) -> Result<RegressionProblem64, SparseArdError> {
    let sigma2 = match known {
        Some(s) if !plan.relearn_noise => s,
        _ => {
            let v = pooled_std(problem.y().as_slice()).powi(2);
            plan.noise_init * if v > 0.0 { v } else { 1.0 }
        }
    };
    problem.with_sigma2(sigma2)
}

/// Fits every grid point of every method on one task and keeps the selected
/// candidate per method.
fn run_selected(ctx: &Context, task: &Task, deadline: &Deadline, out: &mut UnitOutput) -> Vec<TrialRecord> {
    let options = ctx.options();
    let start = Instant::now();
    let base = deadline.check().and_then(|_| Ok(fit_ard(&task.problem, &options)?));
    let mut records = Vec::new();
    let base = match base {
        Ok(b) => b,
        Err(e) => {
            for g in &ctx.plan.methods {
                records.push(ctx.failure(g.method.name(), None, &task.target, &e));
            }
            return records;
        }
    };
    let base_time = start.elapsed().as_secs_f64();
    for grid in &ctx.plan.methods {
        let start = Instant::now();
        let result = select_one(ctx, task, grid, &base, &options, deadline);
        let mut seconds = start.elapsed().as_secs_f64();
        if grid.method == Method::Ard {
            seconds += base_time;
        }
        out.timings.push(TimingRow {
            setting: ctx.setting.clone(),
            trial: ctx.trial,
            method: format!("{}:{}", grid.method.name(), task.target),
            seconds,
        });
        records.push(match result {
            Ok(r) => r,
            Err(e) => ctx.failure(grid.method.name(), None, &task.target, &e),
        });
    }
    records
}

fn select_one(
    ctx: &Context,
    task: &Task,
    grid: &MethodGrid,
    base: &ArdFit<f64>,
    options: &ArdOptions64,
    deadline: &Deadline,
) -> Result<TrialRecord, TrialError> {
    let mut candidates = Vec::with_capacity(grid.params.len());
    let mut last_err = None;
    for &p in &grid.params {
        deadline.check()?;
        match fit_from(&task.problem, &ctx.spec(grid, p), options, Some(base)) {
            Ok(fit) => candidates.push((p, fit)),
            Err(e) => last_err = Some(e),
        }
    }
    if candidates.is_empty() {
        return Err(last_err.expect("grids are nonempty").into());
    }
    let outcome = match ctx.plan.selection {
        SelectionKind::Aicc => aicc_select(&task.problem, &candidates, AiccMode::Corrected)?,
        SelectionKind::Oracle => oracle_select(&candidates, &task.truth)?,
        SelectionKind::None => unreachable!("selection experiments only"),
    };
    let (param, fit) = &candidates[outcome.chosen_index];
    let mut rec = ctx.record(grid.method.name(), Some(*param), &task.target);
    fill_metrics(&mut rec, fit, &task.truth)?;
    rec.score = Some(outcome.score_table[outcome.chosen_index].score);
    Ok(rec)
}

/// Per-method sums over the targets of a multi-output trial.
fn total_rows(ctx: &Context, per_target: &[TrialRecord]) -> Vec<TrialRecord> {
    let mut rows = Vec::new();
    for grid in &ctx.plan.methods {
        let name = grid.method.name();
        let mine: Vec<&TrialRecord> = per_target.iter().filter(|r| r.method == name).collect();
        if let Some(bad) = mine.iter().find(|r| !r.is_ok()) {
            let mut rec = ctx.record(name, None, "total");
            rec.status = bad.status.clone();
            rows.push(rec);
            continue;
        }
        let mut rec = ctx.record(name, None, "total");
        rec.added = Some(mine.iter().filter_map(|r| r.added).sum());
        rec.missed = Some(mine.iter().filter_map(|r| r.missed).sum());
        rec.l1_error = Some(mine.iter().filter_map(|r| r.l1_error).sum());
        rec.l2_error = Some(mine.iter().filter_map(|r| r.l2_error).sum());
        rec.support_size = Some(mine.iter().filter_map(|r| r.support_size).sum());
        rec.converged = Some(mine.iter().all(|r| r.converged == Some(true)));
        rows.push(rec);
    }
    rows
}

fn run_tasks(ctx: &Context, tasks: Result<Vec<Task>, SparseArdError>, deadline: &Deadline) -> UnitOutput {
    let mut out = UnitOutput::default();
    let tasks = match tasks {
        Ok(t) => t,
        Err(e) => {
            for g in &ctx.plan.methods {
                out.records.push(ctx.failure(g.method.name(), None, "all", &e));
            }
            return out;
        }
    };
    let mut records = Vec::new();
    for task in &tasks {
        let rows = run_selected(ctx, task, deadline, &mut out);
        records.extend(rows);
    }
    if tasks.len() > 1 {
        let totals = total_rows(ctx, &records);
        records.extend(totals);
    }
    out.records = records;
    out
}

/// Splits a state series into one regression per state variable.
fn sysid_tasks(
    plan: &Plan,
    x: &DMatrix<f64>,
    dt: f64,
    degree: usize,
    truth: &DMatrix<f64>,
) -> Result<Vec<Task>, SparseArdError> {
    let y = finite_difference(x, dt, 1)?;
    let theta = polynomial_library(x, degree)?;
    (0..x.ncols())
        .map(|j| {
            let problem = RegressionProblem64::new(theta.clone(), y.column(j).into_owned(), 1.0)?;
            Ok(Task {
                target: format!("x{}", j + 1),
                problem: working_problem(plan, problem, None)?,
                truth: truth.column(j).into_owned(),
            })
        })
        .collect()
}

fn linear_unit(ctx: &Context, seed: u64, setup: &ProblemSetup, stream_id: u64, deadline: &Deadline) -> UnitOutput {
    let mut rng = trial_rng(seed, stream_id);
    let plan = ctx.plan;
    let task = match setup {
        ProblemSetup::Linear { m, d, nonzero, kappa, noise_percent, spacing } => {
            build_linear_problem(*m, *d, *nonzero, *kappa, NoiseLevel::Percent(*noise_percent), *spacing, &mut rng)
        }
        ProblemSetup::Fourier { m, modes, nonzero, noise_percent } => {
            build_fourier_problem(*m, *modes, *nonzero, *noise_percent, &mut rng)
        }
        _ => unreachable!(),
    }
    .and_then(|inst| {
        let known = (inst.noise_sigma > 0.0).then_some(inst.noise_sigma * inst.noise_sigma);
        Ok(Task { target: "y".to_string(), problem: working_problem(plan, inst.problem, known)?, truth: inst.xi_true })
    });
    run_tasks(ctx, task.map(|t| vec![t]), deadline)
}

/// Expected added and missed counts from the analytic rates, or `None`
/// where the rates do not describe the fit (finite ARDr width).
fn expected_counts(
    grid: &MethodGrid,
    param: f64,
    rho: &DVector<f64>,
    xi: &DVector<f64>,
    sigma: f64,
) -> Option<(f64, f64)> {
    let param = match (grid.method, grid.penalty_scale) {
        (Method::Ardr, _) if grid.eta_width.is_finite() => return None,
        (Method::Ardr, ScaleName::NoiseScaled) => param / (sigma * sigma),
        _ => param,
    };
    let mut added = 0.0;
    let mut missed = 0.0;
    for i in 0..rho.len() {
        let q = RateQuery { xi_true: xi[i], rho: rho[i], sigma, method: grid.method, param };
        if xi[i] == 0.0 {
            added += fp_rate(&q).ok()?;
        } else {
            missed += fn_rate(&q).ok()?.value;
        }
    }
    Some((added, missed))
}

/// Every grid point of every method on a fixed orthogonal design, with the
/// analytic expectation alongside.
fn ortho_unit(
    ctx: &Context,
    design: &crate::problems::OrthogonalDesign,
    sigma: f64,
    stream_id: u64,
    deadline: &Deadline,
) -> UnitOutput {
    let mut out = UnitOutput::default();
    let mut rng = trial_rng(ctx.plan.seed, stream_id);
    let options = ctx.options();
    let inst = match observe(design.theta.clone(), design.xi_true.clone(), NoiseLevel::Absolute(sigma), &mut rng) {
        Ok(i) => i,
        Err(e) => {
            out.records.push(ctx.failure("all", None, "y", &e));
            return out;
        }
    };
    let base = deadline.check().and_then(|_| Ok(fit_ard(&inst.problem, &options)?));
    for grid in &ctx.plan.methods {
        let start = Instant::now();
        for &p in &grid.params {
            let result = base.as_ref().map_err(|e| e.to_string()).and_then(|base| {
                deadline.check().map_err(|e| e.to_string())?;
                let fit =
                    fit_from(&inst.problem, &ctx.spec(grid, p), &options, Some(base)).map_err(|e| e.to_string())?;
                let mut rec = ctx.record(grid.method.name(), Some(p), "y");
                fill_metrics(&mut rec, &fit, &inst.xi_true).map_err(|e| e.to_string())?;
                if let Some((a, m)) = expected_counts(grid, p, &design.rho, &design.xi_true, sigma) {
                    rec.expected_added = Some(a);
                    rec.expected_missed = Some(m);
                }
                Ok(rec)
            });
            out.records.push(match result {
                Ok(r) => r,
                Err(e) => ctx.failure(grid.method.name(), Some(p), "y", &e),
            });
        }
        out.timings.push(TimingRow {
            setting: ctx.setting.clone(),
            trial: ctx.trial,
            method: grid.method.name().to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    out
}

/// ARDvi(α) against MAP-STSBL(τ = (α−1)/2) on one conditioned design.
fn cond_unit(
    ctx: &Context,
    setup: (usize, usize, usize, f64, f64, crate::config::Spacing),
    stream_id: u64,
    deadline: &Deadline,
) -> UnitOutput {
    let (m, d, nonzero, kappa, sigma, spacing) = setup;
    let mut out = UnitOutput::default();
    let mut rng = trial_rng(ctx.plan.seed, stream_id);
    let options = ctx.options();
    let inst = match build_linear_problem(m, d, nonzero, kappa, NoiseLevel::Absolute(sigma), spacing, &mut rng) {
        Ok(i) => i,
        Err(e) => {
            out.records.push(ctx.failure("all", None, "y", &e));
            return out;
        }
    };
    let base = deadline.check().and_then(|_| Ok(fit_ard(&inst.problem, &options)?));
    let start = Instant::now();
    for grid in &ctx.plan.methods {
        for &alpha in &grid.params {
            let tau = (alpha - 1.0) / 2.0;
            let pair = base.as_ref().map_err(|e| e.to_string()).and_then(|base| {
                deadline.check().map_err(|e| e.to_string())?;
                let vi = fit_from(&inst.problem, &SparsifierSpec64::ardvi(alpha), &options, Some(base))
                    .map_err(|e| e.to_string())?;
                deadline.check().map_err(|e| e.to_string())?;
                let map = fit_from(&inst.problem, &SparsifierSpec64::map_stsbl(tau), &options, Some(base))
                    .map_err(|e| e.to_string())?;
                Ok((vi, map))
            });
            match pair {
                Ok((vi, map)) => {
                    for (name, p, fit) in [("ardvi", alpha, &vi), ("map_stsbl", tau, &map)] {
                        let mut rec = ctx.record(name, Some(p), "y");
                        match fill_metrics(&mut rec, fit, &inst.xi_true) {
                            Ok(()) => out.records.push(rec),
                            Err(e) => out.records.push(ctx.failure(name, Some(p), "y", &e)),
                        }
                    }
                    let (a, b) = (vi.support(), map.support());
                    let sym_diff =
                        a.iter().filter(|i| !b.contains(i)).count() + b.iter().filter(|i| !a.contains(i)).count();
                    out.agreement.push(AgreementRow {
                        setting: ctx.setting.clone(),
                        kappa,
                        sigma,
                        alpha,
                        trial: ctx.trial,
                        agree: sym_diff == 0,
                        sym_diff,
                    });
                }
                Err(e) => {
                    out.records.push(ctx.failure("ardvi", Some(alpha), "y", &e));
                    out.records.push(ctx.failure("map_stsbl", Some(tau), "y", &e));
                }
            }
        }
    }
    out.timings.push(TimingRow {
        setting: ctx.setting.clone(),
        trial: ctx.trial,
        method: "ardvi+map_stsbl".to_string(),
        seconds: start.elapsed().as_secs_f64(),
    });
    out
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Runs the plan on `jobs` worker threads (0 = one per core).
pub fn run_experiment(plan: &Plan, jobs: usize) -> ResultBundle {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
    let units = pool.install(|| run_units(plan));
    let mut records = Vec::new();
    let mut agreement = Vec::new();
    let mut timings = Vec::new();
    for u in units {
        records.extend(u.records);
        agreement.extend(u.agreement);
        timings.extend(u.timings);
    }
    let aggregates = aggregate(&records, plan.selection == SelectionKind::None);
    ResultBundle { plan: plan.clone(), records, aggregates, agreement, timings }
}

/// The fixed design shared by every trial of an orthogonal-rate plan.
pub fn ortho_design(plan: &Plan) -> Option<crate::problems::OrthogonalDesign> {
    match &plan.problem {
        ProblemSetup::OrthoRates { n, nonzero, rho_range, .. } => {
            Some(orthogonal_design(*n, *nonzero, *rho_range, &mut trial_rng(plan.seed, SHARED_STREAM)))
        }
        _ => None,
    }
}

fn run_units(plan: &Plan) -> Vec<UnitOutput> {
    let seed = plan.seed;
    let trials = plan.trials;
    let ctx = |setting: String, trial: usize| Context { plan, setting, trial };
    let limit = plan.timeout_secs;
    match &plan.problem {
        ProblemSetup::OrthoRates { sigmas, .. } => {
            let design = ortho_design(plan).expect("orthogonal plan");
            let units: Vec<(usize, usize)> = (0..sigmas.len()).flat_map(|s| (0..trials).map(move |t| (s, t))).collect();
            units
                .par_iter()
                .map(|&(s, t)| {
                    let c = ctx(format!("sigma={}", fmt_num(sigmas[s])), t);
                    ortho_unit(&c, &design, sigmas[s], stream(s, t), &Deadline::new(limit))
                })
                .collect()
        }
        ProblemSetup::CondSweep { m, d, nonzero, kappas, sigmas, spacing } => {
            let settings: Vec<(f64, f64)> = kappas.iter().flat_map(|&k| sigmas.iter().map(move |&s| (k, s))).collect();
            let units: Vec<(usize, usize)> =
                (0..settings.len()).flat_map(|s| (0..trials).map(move |t| (s, t))).collect();
            units
                .par_iter()
                .map(|&(s, t)| {
                    let (kappa, sigma) = settings[s];
                    let c = ctx(format!("kappa={};sigma={}", fmt_num(kappa), fmt_num(sigma)), t);
                    cond_unit(&c, (*m, *d, *nonzero, kappa, sigma, *spacing), stream(s, t), &Deadline::new(limit))
                })
                .collect()
        }
        ProblemSetup::Linear { .. } | ProblemSetup::Fourier { .. } => (0..trials)
            .into_par_iter()
            .map(|t| linear_unit(&ctx(String::new(), t), seed, &plan.problem, stream(0, t), &Deadline::new(limit)))
            .collect(),
        ProblemSetup::Lorenz63 { dt, steps, noise_percent, degree } => {
            let truth = Lorenz63::<f64>::default().true_coefficients(*degree);
            (0..trials)
                .into_par_iter()
                .map(|t| {
                    let c = ctx(String::new(), t);
                    let deadline = Deadline::new(limit);
                    let mut rng = trial_rng(seed, stream(0, t));
                    let tasks = (|| {
                        let ic = lorenz63_initial_condition(&mut rng);
                        let data = simulate_lorenz63(&Lorenz63::default(), &ic, *dt, *steps)?;
                        let (x, _) = add_noise(&data.clean_x, *noise_percent, &mut rng)?;
                        sysid_tasks(plan, &x, *dt, *degree, &truth)
                    })();
                    run_tasks(&c, tasks, &deadline)
                })
                .collect()
        }
        ProblemSetup::Lorenz96 { n, forcing, dt, steps, noise_percent, degree } => {
            let params = Lorenz96 { n: *n, forcing: *forcing };
            let truth = params.true_coefficients(*degree);
            let clean = simulate_lorenz96(&params, &lorenz96_initial_condition(*n), *dt, *steps);
            (0..trials)
                .into_par_iter()
                .map(|t| {
                    let c = ctx(String::new(), t);
                    let deadline = Deadline::new(limit);
                    let mut rng = trial_rng(seed, stream(0, t));
                    let tasks = clean.clone().and_then(|data| {
                        let (x, _) = add_noise(&data.clean_x, *noise_percent, &mut rng)?;
                        sysid_tasks(plan, &x, *dt, *degree, &truth)
                    });
                    run_tasks(&c, tasks, &deadline)
                })
                .collect()
        }
        ProblemSetup::Ks { length, n_x, dt, steps, noise_percent, rows } => {
            let params = KsParams { length: *length, n_x: *n_x, dt: *dt, steps: *steps };
            let shared = ks_regression(&params, *noise_percent, &mut trial_rng(seed, u64::MAX));
            (0..trials)
                .into_par_iter()
                .map(|t| {
                    let c = ctx(String::new(), t);
                    let deadline = Deadline::new(limit);
                    let mut rng = trial_rng(seed, stream(0, t));
                    let task = shared.as_ref().map_err(Clone::clone).and_then(|(theta, y)| {
                        let (theta_s, y_s) = subsample_rows(theta, y, *rows, &mut rng)?;
                        let problem = RegressionProblem64::new(theta_s, y_s, 1.0)?;
                        Ok(vec![Task {
                            target: "u_t".to_string(),
                            problem: working_problem(plan, problem, None)?,
                            truth: ks_true_coefficients(),
                        }])
                    });
                    run_tasks(&c, task, &deadline)
                })
                .collect()
        }
    }
}

/// Full KS regression: the PDE library of the noisy field against its
/// time derivative, one row per (time, grid point).
pub fn ks_regression<R: rand::Rng + ?Sized>(
    params: &KsParams<f64>,
    noise_percent: f64,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DVector<f64>), SparseArdError> {
    let field = simulate_ks(params, ks_initial_condition)?;
    let (noisy, _) = add_noise(&field, noise_percent, rng)?;
    let u_t = finite_difference(&noisy.transpose(), params.dt, 1)?.transpose();
    let theta = pde_library(&noisy, params.dx())?;
    let y = DVector::from_column_slice(u_t.as_slice());
    Ok((theta, y))
}
