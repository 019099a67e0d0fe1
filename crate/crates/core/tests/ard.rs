use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparse_ard::ard::{compute_c, fit_ard, negative_log_evidence, relearn_noise, verify_loss_identity, ArdOptions};
use sparse_ard::linops::{posterior_moments, RegressionProblem};
use sparse_ard::SparseArdError;

fn gaussian(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
}

fn haar(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, n, n).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Orthogonal columns with squared norms `rho`.
fn orthogonal_design(rng: &mut ChaCha8Rng, m: usize, rho: &[f64]) -> DMatrix<f64> {
    let q = haar(rng, m);
    DMatrix::from_fn(m, rho.len(), |i, j| q[(i, j)] * rho[j].sqrt())
}

fn dense_sigma_y(p: &RegressionProblem<f64>, gamma: &DVector<f64>, alpha: f64) -> DMatrix<f64> {
    let t = p.theta();
    let mut s = t * DMatrix::from_diagonal(gamma) * t.transpose();
    for i in 0..p.m() {
        s[(i, i)] += alpha * p.sigma2();
    }
    s
}

#[test]
fn zero_data_gives_zero_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = RegressionProblem::new(gaussian(&mut rng, 20, 8), DVector::zeros(20), 0.1).unwrap();
    let fit = fit_ard(&p, &ArdOptions::default()).unwrap();
    assert!(fit.gamma.iter().all(|&g| g == 0.0));
    assert!(fit.mu_xi.iter().all(|&v| v == 0.0));
    assert!(fit.converged);
}

#[test]
fn identity_design_recovers_coefficients_at_low_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 200;
    let mut xi = DVector::zeros(d);
    for i in sample(&mut rng, d, 20).into_iter() {
        xi[i] = rng.sample::<f64, _>(StandardNormal);
    }
    let sigma = 1e-6;
    let y = &xi + DVector::from_fn(d, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    let p = RegressionProblem::new(DMatrix::identity(d, d), y, sigma * sigma).unwrap();
    let fit = fit_ard(&p, &ArdOptions::default()).unwrap();
    for i in 0..d {
        if xi[i] != 0.0 {
            assert!(fit.gamma[i] > 0.0);
        }
    }
    assert!((&fit.mu_xi - &xi).amax() < 1e-4);
}

#[test]
fn c_at_zero_gamma_identity() {
    let p = RegressionProblem::new(DMatrix::identity(4, 4), DVector::from_element(4, 1.0), 1.0).unwrap();
    let c = compute_c(&p, &DVector::zeros(4), 1.0).unwrap();
    assert!((c - DVector::from_element(4, 1.0)).amax() < 1e-15);
}

#[test]
fn c_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (m, d) in [(6, 4), (4, 6), (9, 9)] {
        let theta = gaussian(&mut rng, m, d);
        let y = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
        let p = RegressionProblem::new(theta.clone(), y, 0.35).unwrap();
        let gamma = DVector::from_fn(d, |i, _| if i == 1 { 0.0 } else { rng.gen_range(0.1..2.0) });
        for alpha in [1.0, 3.0] {
            let inv = dense_sigma_y(&p, &gamma, alpha).try_inverse().unwrap();
            let expect = (theta.transpose() * inv * &theta).diagonal();
            let c = compute_c(&p, &gamma, alpha).unwrap();
            for i in 0..d {
                assert!((c[i] - expect[i]).abs() < 1e-10 * expect[i], "m={m} d={d} i={i}");
                assert!(c[i] > 0.0);
            }
        }
    }
}

#[test]
fn c_orthogonal_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rho = [0.5, 1.0, 4.0, 9.0];
    let theta = orthogonal_design(&mut rng, 6, &rho);
    let p = RegressionProblem::new(theta, DVector::zeros(6), 0.2).unwrap();
    let gamma = DVector::from_vec(vec![0.0, 0.3, 1e-3, 5.0]);
    let alpha = 2.0;
    let c = compute_c(&p, &gamma, alpha).unwrap();
    for i in 0..4 {
        let expect = 1.0 / (alpha * 0.2 / rho[i] + gamma[i]);
        assert!((c[i] - expect).abs() < 1e-10 * expect);
    }
    assert!(compute_c(&p, &gamma, 0.5).is_err());
}

#[test]
fn evidence_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let theta = gaussian(&mut rng, 7, 3);
    let y = DVector::from_fn(7, |_, _| rng.sample(StandardNormal));
    let sigma2 = 0.6;
    let p = RegressionProblem::new(theta, y.clone(), sigma2).unwrap();
    let l = negative_log_evidence(&p, &DVector::zeros(3)).unwrap();
    let expect = 7.0 * sigma2.ln() + y.norm_squared() / sigma2;
    assert!((l - expect).abs() < 1e-12 * expect.abs());

    let (t, yv, g) = (1.7, -0.4, 0.9);
    let p1 = RegressionProblem::new(DMatrix::from_element(1, 1, t), DVector::from_element(1, yv), sigma2).unwrap();
    let l1 = negative_log_evidence(&p1, &DVector::from_element(1, g)).unwrap();
    let v = sigma2 + t * t * g;
    assert!((l1 - (v.ln() + yv * yv / v)).abs() < 1e-13);
}

#[test]
fn evidence_equals_variational_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (m, d) in [(10, 6), (5, 8)] {
        let theta = gaussian(&mut rng, m, d);
        let y = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
        let p = RegressionProblem::new(theta.clone(), y.clone(), 0.4).unwrap();
        let gamma = DVector::from_fn(d, |_, _| rng.gen_range(0.1..2.0));
        let logdet = dense_sigma_y(&p, &gamma, 1.0).determinant().ln();
        // The minimizing ξ of the auxiliary quadratic is the posterior mean.
        let (mu, _) = posterior_moments(&p, &gamma).unwrap();
        let aux =
            (&y - &theta * &mu).norm_squared() / 0.4 + mu.iter().zip(gamma.iter()).map(|(u, g)| u * u / g).sum::<f64>();
        let l = negative_log_evidence(&p, &gamma).unwrap();
        assert!((l - (logdet + aux)).abs() < 1e-8 * (1.0 + l.abs()));
    }
}

#[test]
fn loss_identity_limits() {
    let y: DVector<f64> = DVector::from_vec(vec![0.3, -1.0, 2.0]);
    let p = RegressionProblem::new(DMatrix::identity(3, 3), y.clone(), 1.0).unwrap();
    let (lhs, rhs) = verify_loss_identity(&p, &DVector::zeros(3)).unwrap();
    assert!((lhs - y.norm_squared()).abs() < 1e-14 && (rhs - y.norm_squared()).abs() < 1e-14);
    let (lhs, rhs) = verify_loss_identity(&p, &DVector::from_element(3, 1e9)).unwrap();
    assert!(lhs < 1e-8 && rhs < 1e-8);
}

#[test]
fn loss_identity_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let theta = gaussian(&mut rng, 10, 6);
        let y = DVector::from_fn(10, |_, _| rng.sample(StandardNormal));
        let p = RegressionProblem::new(theta, y, rng.gen_range(0.05..3.0)).unwrap();
        let gamma = DVector::from_fn(6, |_, _| rng.gen_range(0.1..2.0));
        let (lhs, rhs) = verify_loss_identity(&p, &gamma).unwrap();
        assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()));
    }
}

#[test]
fn relearn_zero_residual_hits_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let theta = gaussian(&mut rng, 12, 3);
    let xi = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let p = RegressionProblem::new(theta.clone(), &theta * xi, 1e-20).unwrap();
    let gamma = DVector::from_element(3, 1e6);
    assert_eq!(relearn_noise(&p, &gamma), Err(SparseArdError::DegenerateResidual { floor: 1e-12 }));
}

#[test]
fn relearn_pure_noise_monte_carlo() {
    let sigma0 = 0.7;
    let mut total = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 200;
        let y = DVector::from_fn(m, |_, _| sigma0 * rng.sample::<f64, _>(StandardNormal));
        let p = RegressionProblem::new(gaussian(&mut rng, m, 5), y, 1.0).unwrap();
        total += relearn_noise(&p, &DVector::zeros(5)).unwrap();
    }
    let mean = total / 100.0;
    assert!((mean - sigma0 * sigma0).abs() < 0.05 * sigma0 * sigma0, "{mean}");
}

#[test]
fn relearned_noise_tracks_truth_when_overdetermined() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (m, d) = (500, 50);
    let x = gaussian(&mut rng, m, d);
    let mut xi = DVector::zeros(d);
    for i in sample(&mut rng, d, 5).into_iter() {
        xi[i] = rng.sample::<f64, _>(StandardNormal);
    }
    let clean = &x * &xi;
    let mean = clean.mean();
    let std = (clean.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
    let sigma = 0.1 * std;
    let y = &clean + DVector::from_fn(m, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    for start in [0.1, 1.0, 10.0] {
        let p = RegressionProblem::new(x.clone(), y.clone(), start * sigma * sigma).unwrap();
        let opts = ArdOptions { relearn_noise: true, ..ArdOptions::default() };
        let fit = fit_ard(&p, &opts).unwrap();
        let ratio = fit.sigma2 / (sigma * sigma);
        assert!((ratio - 1.0).abs() < 0.2, "start {start}: ratio {ratio}");
    }
}

fn check_fit_invariants(p: &RegressionProblem<f64>) {
    let opts = ArdOptions::default();
    let fit = fit_ard(p, &opts).unwrap();
    for w in fit.loss_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()), "loss increased: {:?}", fit.loss_trace);
    }
    for i in 0..p.d() {
        assert!(fit.gamma[i] >= 0.0);
        assert_eq!(fit.gamma[i] == 0.0, fit.mu_xi[i] == 0.0, "support/mean mismatch at {i}");
    }
    // The reported γ is one update behind the final moments, so the fixed
    // point holds at the convergence scale.
    if fit.converged {
        let scale = opts.tol * (1.0 + fit.gamma.amax());
        for i in fit.support() {
            let target = fit.mu_xi[i].abs() / fit.c[i].sqrt();
            assert!((fit.gamma[i] - target).abs() <= 10.0 * scale, "{i}: {} {}", fit.gamma[i], target);
        }
    }
    let tight = ArdOptions { tol: 1e-10, max_iter: 20_000, ..ArdOptions::default() };
    let fit = fit_ard(p, &tight).unwrap();
    if fit.converged {
        for i in fit.support() {
            let target = fit.mu_xi[i].abs() / fit.c[i].sqrt();
            assert!((fit.gamma[i] - target).abs() <= 1e-6 * target + 1e-9 * (1.0 + fit.gamma.amax()), "{i}");
        }
    }
}

#[test]
fn fit_invariants_on_seeded_problems() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let m = rng.gen_range(8..30);
        let d = rng.gen_range(3..25);
        let theta = gaussian(&mut rng, m, d);
        let mut xi = DVector::zeros(d);
        for i in sample(&mut rng, d, d.min(3)).into_iter() {
            xi[i] = rng.sample::<f64, _>(StandardNormal) * 2.0;
        }
        let y = &theta * xi + DVector::from_fn(m, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        check_fit_invariants(&RegressionProblem::new(theta, y, 0.01).unwrap());
    }
}

#[test]
fn orthogonal_fixed_point_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let d = 30;
    let rho: Vec<f64> = (0..d).map(|_| rng.gen_range(1.0..3.0)).collect();
    let theta = orthogonal_design(&mut rng, 40, &rho);
    let y = DVector::from_fn(40, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma2 = 0.3;
    let p = RegressionProblem::new(theta, y, sigma2).unwrap();
    let opts = ArdOptions { tol: 1e-12, max_iter: 2000, ..ArdOptions::default() };
    let fit = fit_ard(&p, &opts).unwrap();
    assert!(fit.converged);
    for i in 0..d {
        let a = sigma2 / rho[i];
        let x = fit.mu_xi[i].abs();
        let sqrt_c = (-x + (x * x + 4.0 * a).sqrt()) / (2.0 * a);
        assert!((fit.c[i].sqrt() - sqrt_c).abs() < 1e-6 * sqrt_c, "{i}");
    }
}

#[test]
fn fit_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let theta = gaussian(&mut rng, 25, 15);
    let y = DVector::from_fn(25, |_, _| rng.sample(StandardNormal));
    let p = RegressionProblem::new(theta, y, 0.1).unwrap();
    let opts = ArdOptions { relearn_noise: true, ..ArdOptions::default() };
    assert_eq!(fit_ard(&p, &opts).unwrap(), fit_ard(&p.clone(), &opts).unwrap());
}

#[test]
fn single_precision_fit_runs() {
    let theta = DMatrix::<f32>::from_fn(12, 4, |i, j| ((i * 7 + j * 3) % 5) as f32 - 2.0);
    let y = &theta * DVector::from_vec(vec![1.0f32, 0.0, -0.5, 0.0]);
    let p = RegressionProblem::new(theta, y, 1e-3f32).unwrap();
    let fit = fit_ard(&p, &ArdOptions::default()).unwrap();
    assert!((fit.mu_xi[0] - 1.0).abs() < 1e-2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_identity_property(seed in any::<u64>(), m in 1usize..15, d in 1usize..12, sigma2 in 0.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = gaussian(&mut rng, m, d);
        let y = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
        let p = RegressionProblem::new(theta, y, sigma2).unwrap();
        let gamma = DVector::from_fn(d, |_, _| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.01..5.0) });
        let (lhs, rhs) = verify_loss_identity(&p, &gamma).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()));
    }
}
