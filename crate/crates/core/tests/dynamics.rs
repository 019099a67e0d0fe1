use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use sparse_ard::dynamics::*;
use sparse_ard::features::{finite_difference, pde_library, polynomial_library};
use sparse_ard::SparseArdError;

#[test]
fn lorenz63_origin_is_fixed() {
    let data = simulate_lorenz63(&Lorenz63::default(), &DVector::zeros(3), 0.05, 250).unwrap();
    assert_eq!(data.x.shape(), (251, 3));
    assert!(data.x.iter().all(|&v| v == 0.0));
}

#[test]
fn lorenz63_stays_on_attractor() {
    for trial in 0..10 {
        let ic = lorenz63_initial_condition(&mut trial_rng(5, trial));
        let data = simulate_lorenz63(&Lorenz63::default(), &ic, 0.05, 250).unwrap();
        assert!(data.x.amax() < 100.0);
    }
}

#[test]
fn lorenz63_rk4_is_fourth_order() {
    let p = Lorenz63::default();
    let ic = DVector::from_vec(vec![1.0, 1.0, 20.0]);
    let horizon = 0.5;
    let end = |dt: f64| {
        let steps = (horizon / dt).round() as usize;
        simulate_lorenz63(&p, &ic, dt, steps).unwrap().x.row(steps).transpose()
    };
    let reference = end(0.01 / 64.0);
    let coarse = (end(0.01) - &reference).amax();
    let fine = (end(0.005) - &reference).amax();
    let ratio = coarse / fine;
    assert!((ratio - 16.0).abs() < 0.2 * 16.0, "ratio {ratio}");
}

#[test]
fn lorenz63_coefficients_reproduce_vector_field() {
    let p = Lorenz63::<f64>::default();
    let xi = p.true_coefficients(5);
    assert_eq!(xi.shape(), (56, 3));
    assert_eq!(xi.iter().filter(|&&v| v != 0.0).count(), 7);
    let mut rng = trial_rng(1, 0);
    let x = DMatrix::from_fn(20, 3, |_, _| rng.gen_range(-10.0..10.0));
    let lib = polynomial_library(&x, 5).unwrap();
    let fitted = &lib * &xi;
    for r in 0..20 {
        let want = p.rhs(&x.row(r).transpose());
        for j in 0..3 {
            assert!((fitted[(r, j)] - want[j]).abs() < 1e-9);
        }
    }
}

#[test]
fn lorenz96_equilibria() {
    let zero = Lorenz96 { n: 10, forcing: 0.0 };
    let data = simulate_lorenz96(&zero, &DVector::zeros(10), 0.05, 50).unwrap();
    assert!(data.x.iter().all(|&v| v == 0.0));
    let p = Lorenz96 { n: 12, forcing: 16.0 };
    let data = simulate_lorenz96(&p, &DVector::from_element(12, 16.0), 0.05, 50).unwrap();
    assert!(data.x.iter().all(|&v| v == 16.0));
    assert!(simulate_lorenz96(&Lorenz96 { n: 3, forcing: 1.0 }, &DVector::zeros(3), 0.05, 5).is_err());
    assert!(simulate_lorenz96(&p, &DVector::zeros(4), 0.05, 5).is_err());
}

#[test]
fn lorenz96_default_run() {
    let p = Lorenz96::default();
    let ic = lorenz96_initial_condition::<f64>(40);
    assert!((ic[19] - 1.0).abs() < 1e-15);
    assert!((ic[20] - (-1.0f64 / 16.0).exp()).abs() < 1e-15);
    let data = simulate_lorenz96(&p, &ic, 0.05, 200).unwrap();
    assert_eq!(data.x.shape(), (201, 40));
    assert!(data.x.iter().all(|v| v.is_finite()));
}

#[test]
fn lorenz96_coefficients_reproduce_vector_field() {
    let p = Lorenz96 { n: 10, forcing: 16.0f64 };
    let xi = p.true_coefficients(2);
    assert_eq!(xi.shape(), (66, 10));
    for j in 0..10 {
        assert_eq!(xi.column(j).iter().filter(|&&v| v != 0.0).count(), 4);
    }
    let mut rng = trial_rng(2, 0);
    let x = DMatrix::from_fn(15, 10, |_, _| rng.gen_range(-5.0..5.0));
    let fitted = polynomial_library(&x, 2).unwrap() * &xi;
    for r in 0..15 {
        let want = p.rhs(&x.row(r).transpose());
        for j in 0..10 {
            assert!((fitted[(r, j)] - want[j]).abs() < 1e-10);
        }
    }
}

#[test]
fn ks_zero_field_stays_zero() {
    let params = KsParams { n_x: 64, steps: 20, ..KsParams::default() };
    let u = simulate_ks(&params, |_| 0.0).unwrap();
    assert_eq!(u.shape(), (64, 21));
    assert!(u.iter().all(|&v| v == 0.0));
}

#[test]
fn ks_default_shapes() {
    let params = KsParams::<f64>::with_1024_steps();
    let u = simulate_ks(&params, ks_initial_condition).unwrap();
    assert_eq!(u.shape(), (512, 1025));
    assert!(u.amax() < 10.0);
    assert_eq!(KsParams::<f64>::default().steps, 1071);
    assert!(simulate_ks(&KsParams::<f64> { n_x: 100, ..KsParams::default() }, ks_initial_condition).is_err());
}

#[test]
fn ks_linear_growth_matches_dispersion() {
    let params = KsParams::<f64> { n_x: 64, dt: 0.01, steps: 500, ..KsParams::default() };
    // Mode 8 on [0, 32π] has k = 1/2 and growth rate k² − k⁴ = 3/16.
    let k = 0.5;
    let eps = 1e-8;
    let u = simulate_ks(&params, |x: f64| eps * (k * x).cos()).unwrap();
    let amp = |col: usize| u.column(col).amax();
    let t = 5.0;
    let rate = (amp(500) / amp(0)).ln() / t;
    let want = k * k - k.powi(4);
    assert!(((rate - want) / want).abs() < 0.01, "rate {rate}");
}

#[test]
fn ks_etdrk4_is_fourth_order() {
    let base = KsParams::<f64> { n_x: 64, ..KsParams::default() };
    let end = |dt: f64| {
        let steps = (5.0 / dt).round() as usize;
        let u = simulate_ks(&KsParams { dt, steps, ..base }, ks_initial_condition).unwrap();
        u.column(steps).into_owned()
    };
    let dt = 0.1;
    let reference = end(dt / 16.0);
    let coarse = (end(dt) - &reference).amax();
    let fine = (end(dt / 2.0) - &reference).amax();
    let order = (coarse / fine).log2();
    assert!((order - 4.0).abs() < 0.3, "order {order}");
}

#[test]
fn ks_field_satisfies_the_equation() {
    let params = KsParams::<f64> { n_x: 512, dt: 0.02, steps: 400, ..KsParams::default() };
    let u = simulate_ks(&params, ks_initial_condition).unwrap();
    let lib = pde_library(&u, params.dx()).unwrap();
    let ut = finite_difference(&u.transpose(), params.dt, 1).unwrap().transpose();
    let target = DVector::from_column_slice(ut.as_slice());
    let predicted = &lib * ks_true_coefficients::<f64>();
    let resid = (&predicted - &target).amax() / target.amax();
    assert!(resid < 1e-3, "relative residual {resid}");
}

#[test]
fn noise_levels() {
    let clean = DMatrix::from_fn(300, 3, |i, j| ((i * 7 + j) as f64).sin() * 4.0);
    let (same, sigma) = add_noise(&clean, 0.0, &mut trial_rng(1, 0)).unwrap();
    assert_eq!(same, clean);
    assert_eq!(sigma, 0.0);
    let (noisy, sigma) = add_noise(&clean, 1.0, &mut trial_rng(1, 0)).unwrap();
    let std = pooled_std(clean.as_slice());
    assert!((sigma - 0.01 * std).abs() < 1e-15);
    assert_eq!(add_noise(&clean, 1.0, &mut trial_rng(1, 0)).unwrap().0, noisy);
    assert!(add_noise(&clean, -1.0, &mut trial_rng(1, 0)).is_err());

    let unit = DMatrix::from_fn(200_000, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let (noisy, sigma) = add_noise(&unit, 100.0, &mut trial_rng(3, 0)).unwrap();
    assert_eq!(sigma, 1.0);
    let noise: Vec<f64> = (&noisy - &unit).iter().cloned().collect();
    let n = noise.len() as f64;
    let mean = noise.iter().sum::<f64>() / n;
    let emp = pooled_std(&noise);
    assert!((emp - 1.0).abs() < 0.05);
    assert!(mean.abs() < 3.0 * emp / n.sqrt());

    let y = DVector::from_fn(1000, |i, _| (i as f64 * 0.01).cos());
    let (ny, s) = add_target_noise(&y, 10.0, &mut trial_rng(4, 0)).unwrap();
    assert!((s - 0.1 * pooled_std(y.as_slice())).abs() < 1e-15);
    assert_ne!(ny, y);

    let data = simulate_lorenz63(&Lorenz63::default(), &DVector::from_vec(vec![1.0, 2.0, 20.0]), 0.05, 50).unwrap();
    let noisy = data.with_noise(1.0, 9).unwrap();
    assert_eq!(noisy.clean_x, data.x);
    assert_eq!(noisy.seed, Some(9));
    assert!(noisy.noise_sigma > 0.0);
    assert_eq!(noisy, data.with_noise(1.0, 9).unwrap());
}

#[test]
fn subsampling() {
    let mut rng = trial_rng(6, 0);
    let theta = DMatrix::from_fn(50, 4, |_, _| rng.gen_range(-1.0..1.0));
    let xi = DVector::from_vec(vec![1.0, 0.0, -2.0, 0.5]);
    let y = &theta * &xi;
    let (all_t, all_y) = subsample_rows(&theta, &y, 50, &mut trial_rng(7, 0)).unwrap();
    let mut rows: Vec<usize> = (0..50).map(|r| (0..50).find(|&i| theta.row(i) == all_t.row(r)).unwrap()).collect();
    rows.sort();
    assert_eq!(rows, (0..50).collect::<Vec<_>>());
    assert!((&all_t * &xi - &all_y).amax() < 1e-12);
    let (sub_t, sub_y) = subsample_rows(&theta, &y, 10, &mut trial_rng(7, 1)).unwrap();
    assert_eq!(sub_t.nrows(), 10);
    assert!((&sub_t * &xi - &sub_y).amax() < 1e-12);
    assert!(matches!(
        subsample_rows(&theta, &y, 51, &mut trial_rng(7, 0)),
        Err(SparseArdError::SampleTooLarge { requested: 51, available: 50 })
    ));
}

#[test]
fn trial_streams_are_reproducible_and_distinct() {
    let a: Vec<u64> = (0..4).map(|_| trial_rng(11, 0).next_u64()).collect();
    assert!(a.windows(2).all(|w| w[0] == w[1]));
    assert_ne!(trial_rng(11, 0).next_u64(), trial_rng(11, 1).next_u64());
    assert_ne!(trial_rng(11, 0).next_u64(), trial_rng(12, 0).next_u64());
}

#[test]
fn single_precision_generators() {
    let data =
        simulate_lorenz63(&Lorenz63::<f32>::default(), &DVector::from_vec(vec![1.0f32, 1.0, 20.0]), 0.01, 100).unwrap();
    assert!(data.x.iter().all(|v| v.is_finite()));
    let u = simulate_ks(&KsParams::<f32> { n_x: 32, steps: 10, ..KsParams::default() }, ks_initial_condition).unwrap();
    assert!(u.iter().all(|v| v.is_finite()));
}
