use std::fs;
use std::path::Path;
use std::process::Command;

use nalgebra::DMatrix;
use sparse_ard::dynamics::{pooled_std, trial_rng};
use sparse_ard_cli::config::{self, ConfigError, ExperimentKind, Spacing};
use sparse_ard_cli::problems::{build_linear_problem, singular_values, NoiseLevel};
use sparse_ard_cli::records::{aggregate, quantile, read_aggregates, read_agreement, write_records, RECORD_HEADER};
use sparse_ard_cli::table::rate_table;
use sparse_ard_cli::{emit_results, read_records, run_experiment};

const BIN: &str = env!("CARGO_BIN_EXE_sparse-ard");

fn plan(json: &str) -> config::Plan {
    config::parse(json).unwrap()
}

fn svd_condition(x: &DMatrix<f64>) -> f64 {
    let s = x.clone().singular_values();
    s.max() / s.min()
}

#[test]
fn config_defaults_follow_experiment() {
    let p = plan(r#"{"experiment": "linear"}"#);
    assert_eq!(p.trials, 100);
    assert!(p.relearn_noise);
    assert_eq!(p.methods.len(), 6);
    assert!(p.methods.iter().skip(1).all(|g| g.params.len() == 15));
    match p.problem {
        config::ProblemSetup::Linear { m, d, nonzero, kappa, noise_percent, spacing } => {
            assert_eq!((m, d, nonzero), (250, 250, 25));
            assert_eq!(kappa, 100.0);
            assert_eq!(noise_percent, 10.0);
            assert_eq!(spacing, Spacing::Log);
        }
        other => panic!("unexpected setup {other:?}"),
    }
    let o = plan(r#"{"experiment": "ortho_rates"}"#);
    assert_eq!(o.experiment, ExperimentKind::OrthoRates);
    assert!(!o.relearn_noise);
    assert_eq!(o.methods.len(), 5);
}

#[test]
fn config_syntax_error_reports_line() {
    let err = config::parse("{\n  \"experiment\": \"linear\",\n  \"trials\": ,\n}").unwrap_err();
    match err {
        ConfigError::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other}"),
    }
}

#[test]
fn config_invalid_values_name_the_field() {
    let cases = [
        ("{\n\"experiment\": \"linear\",\n\"trials\": 0\n}", "trials", Some(3)),
        ("{\n\"experiment\": \"linear\",\n\"kappa\": 0.5\n}", "kappa", Some(3)),
        (
            "{\"experiment\": \"linear\",\n\"methods\": [{\"method\": \"ardvi\", \"values\": []}]}",
            "methods[0].values",
            Some(2),
        ),
        ("{\"experiment\": \"linear\", \"methods\": [{\"method\": \"lasso\"}]}", "methods[0].method", Some(1)),
        ("{\"experiment\": \"lorenz63\", \"kappa\": 10}", "kappa", Some(1)),
        ("{\"trials\": 3}", "experiment", None),
        ("{\"experiment\": \"linear\", \"nonzero\": 300}", "nonzero", Some(1)),
    ];
    for (text, want, want_line) in cases {
        match config::parse(text) {
            Err(ConfigError::Invalid { field, line, .. }) => {
                assert_eq!(field, want, "{text}");
                assert_eq!(line, want_line, "{text}");
            }
            other => panic!("{text}: expected invalid field, got {other:?}"),
        }
    }
    assert!(matches!(config::parse(r#"{"experiment": "linear", "bogus": 1}"#), Err(ConfigError::Parse { .. })));
}

#[test]
fn generated_condition_number_matches_kappa() {
    for (kappa, spacing) in [(10.0, Spacing::Log), (100.0, Spacing::Log), (1e3, Spacing::Linear)] {
        let inst =
            build_linear_problem(40, 40, 5, kappa, NoiseLevel::Percent(10.0), spacing, &mut trial_rng(3, 0)).unwrap();
        let cond = svd_condition(inst.problem.theta());
        assert!((cond - kappa).abs() <= 1e-8 * kappa, "κ {kappa}: got {cond}");
    }
    let wide =
        build_linear_problem(20, 35, 5, 50.0, NoiseLevel::Percent(0.0), Spacing::Log, &mut trial_rng(3, 1)).unwrap();
    let cond = svd_condition(&wide.problem.theta().transpose());
    assert!((cond - 50.0).abs() <= 1e-8 * 50.0);
}

#[test]
fn unit_kappa_gives_orthogonal_design() {
    let inst =
        build_linear_problem(30, 30, 4, 1.0, NoiseLevel::Percent(5.0), Spacing::Log, &mut trial_rng(9, 0)).unwrap();
    let s = inst.problem.theta().clone().singular_values();
    assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
    let gram = inst.problem.theta().tr_mul(inst.problem.theta());
    assert!((gram - DMatrix::identity(30, 30)).amax() < 1e-12);
}

#[test]
fn singular_value_spacing() {
    let log = singular_values(5, 1e4, Spacing::Log);
    for (v, want) in log.iter().zip([1.0, 0.1, 1e-2, 1e-3, 1e-4]) {
        assert!((v - want).abs() < 1e-15 * want.max(1e-4) * 1e4);
    }
    let lin = singular_values(3, 4.0, Spacing::Linear);
    assert_eq!(lin, vec![1.0, 0.625, 0.25]);
    assert_eq!(singular_values(1, 10.0, Spacing::Log), vec![1.0]);
}

#[test]
fn linear_problem_noise_and_sparsity() {
    let inst = build_linear_problem(200, 200, 20, 10.0, NoiseLevel::Percent(10.0), Spacing::Log, &mut trial_rng(5, 2))
        .unwrap();
    assert_eq!(inst.xi_true.iter().filter(|v| **v != 0.0).count(), 20);
    let clean = inst.problem.theta() * &inst.xi_true;
    let want = 0.1 * pooled_std(clean.as_slice());
    assert!((inst.noise_sigma - want).abs() < 1e-15 * want.max(1.0));
    assert_eq!(inst.problem.sigma2(), inst.noise_sigma * inst.noise_sigma);
}

fn small_linear() -> config::Plan {
    plan(
        r#"{"experiment": "linear", "m": 30, "d": 30, "nonzero": 4, "trials": 3, "seed": 11,
            "methods": [{"method": "ard"}, {"method": "ardvi", "values": [1, 3, 10]},
                        {"method": "m_stsbl", "log": [0.01, 1, 4]}]}"#,
    )
}

#[test]
fn empty_records_write_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    write_records(&path, &[]).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text, format!("{}\n", RECORD_HEADER.join(",")));
    assert!(read_records(&path).unwrap().is_empty());
}

#[test]
fn records_round_trip() {
    let bundle = run_experiment(&small_linear(), 1);
    assert_eq!(bundle.records.len(), 3 * 3);
    let dir = tempfile::tempdir().unwrap();
    emit_results(&bundle, dir.path(), false).unwrap();
    let back = read_records(&dir.path().join("records.csv")).unwrap();
    assert_eq!(back, bundle.records);
    let aggs = read_aggregates(&dir.path().join("aggregates.csv")).unwrap();
    assert_eq!(aggs, bundle.aggregates);
    let header = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert!(header.starts_with(&RECORD_HEADER.join(",")));
    assert!(!dir.path().join("timings.csv").exists());
}

#[test]
fn aggregates_match_direct_statistics() {
    let bundle = run_experiment(&small_linear(), 1);
    let l2: Vec<f64> = bundle.records.iter().filter(|r| r.method == "ardvi").map(|r| r.l2_error.unwrap()).collect();
    let row = bundle.aggregates.iter().find(|a| a.method == "ardvi" && a.metric == "l2_error").unwrap();
    let mut sorted = l2.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(row.count, 3);
    assert!((row.mean - l2.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert_eq!(row.median, sorted[1]);
    assert_eq!((row.min, row.max), (sorted[0], sorted[2]));
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    assert!(aggregate(&[], false).is_empty());
}

#[test]
fn meta_echoes_resolved_config() {
    let bundle = run_experiment(&small_linear(), 1);
    let dir = tempfile::tempdir().unwrap();
    emit_results(&bundle, dir.path(), true).unwrap();
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["config"]["experiment"], "linear");
    assert_eq!(meta["config"]["problem"]["m"], 30);
    assert_eq!(meta["config"]["methods"][1]["method"], "ardvi");
    assert!(meta["version"].is_string());
    assert!(dir.path().join("timings.csv").exists());
}

fn files_equal(a: &Path, b: &Path, name: &str) {
    assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
}

#[test]
fn same_seed_same_bytes_regardless_of_threads() {
    let p = small_linear();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_results(&run_experiment(&p, 1), a.path(), false).unwrap();
    emit_results(&run_experiment(&p, 3), b.path(), false).unwrap();
    for name in ["records.csv", "aggregates.csv", "meta.json"] {
        files_equal(a.path(), b.path(), name);
    }
    let mut other = p.clone();
    other.seed += 1;
    let c = tempfile::tempdir().unwrap();
    emit_results(&run_experiment(&other, 1), c.path(), false).unwrap();
    assert_ne!(fs::read(a.path().join("records.csv")).unwrap(), fs::read(c.path().join("records.csv")).unwrap());
}

#[test]
fn lorenz63_records_per_dimension_and_total() {
    let p = plan(
        r#"{"experiment": "lorenz63", "trials": 2, "seed": 4, "degree": 2,
            "methods": [{"method": "ard"}, {"method": "m_stsbl", "values": [0.1, 0.5]}]}"#,
    );
    let bundle = run_experiment(&p, 1);
    assert_eq!(bundle.failures(), 0);
    assert_eq!(bundle.records.len(), 2 * (3 * 2 + 2));
    for trial in 0..2 {
        for method in ["ard", "m_stsbl"] {
            let dims: Vec<_> = bundle
                .records
                .iter()
                .filter(|r| r.trial == trial && r.method == method && r.target != "total")
                .collect();
            let total =
                bundle.records.iter().find(|r| r.trial == trial && r.method == method && r.target == "total").unwrap();
            assert_eq!(dims.len(), 3);
            assert_eq!(total.added, Some(dims.iter().map(|r| r.added.unwrap()).sum()));
            assert_eq!(total.missed, Some(dims.iter().map(|r| r.missed.unwrap()).sum()));
        }
    }
    assert!(bundle.aggregates.iter().any(|a| a.target == "dims" && a.count == 6));
}

#[test]
fn ortho_rates_carry_expected_counts() {
    let p = plan(
        r#"{"experiment": "ortho_rates", "n": 40, "nonzero": 5, "sigmas": [0.1], "trials": 2,
            "methods": [{"method": "ardvi", "values": [2, 4]},
                        {"method": "ardr", "values": [10], "eta_width": 0.1}]}"#,
    );
    let bundle = run_experiment(&p, 1);
    assert_eq!(bundle.records.len(), 2 * 3);
    for r in &bundle.records {
        if r.method == "ardvi" {
            assert!(r.expected_added.unwrap() > 0.0);
            assert!(r.expected_missed.unwrap() >= 0.0);
        } else {
            assert_eq!(r.expected_added, None);
        }
    }
    assert!(bundle.aggregates.iter().any(|a| a.param == Some(4.0) && a.metric == "expected_added"));
}

#[test]
fn cond_sweep_agrees_exactly_at_unit_kappa() {
    let p = plan(
        r#"{"experiment": "cond_sweep", "m": 60, "d": 60, "nonzero": 6, "kappas": [1, 10, 100],
            "sigmas": [0.1, 0.01], "trials": 6, "seed": 2}"#,
    );
    let bundle = run_experiment(&p, 0);
    assert_eq!(bundle.failures(), 0);
    let dir = tempfile::tempdir().unwrap();
    emit_results(&bundle, dir.path(), false).unwrap();
    let rows = read_agreement(&dir.path().join("agreement.csv")).unwrap();
    assert_eq!(rows, bundle.agreement);
    assert_eq!(rows.len(), 3 * 2 * 6 * 3);
    for r in rows.iter().filter(|r| r.kappa == 1.0) {
        assert!(r.agree, "κ=1 disagreement: {r:?}");
    }
    assert!(rows.iter().any(|r| r.kappa > 1.0 && !r.agree));
}

#[test]
fn cond_sweep_default_disagreement_grows_with_kappa() {
    let bundle = run_experiment(&plan(r#"{"experiment": "cond_sweep", "seed": 1}"#), 0);
    assert_eq!(bundle.failures(), 0);
    let rate = |k: f64| {
        let sel: Vec<_> = bundle.agreement.iter().filter(|r| r.kappa == k).collect();
        sel.iter().filter(|r| !r.agree).count() as f64 / sel.len() as f64
    };
    let (r1, r10, r100) = (rate(1.0), rate(10.0), rate(100.0));
    assert_eq!(r1, 0.0);
    assert!(r1 <= r10 && r10 <= r100, "disagreement {r1} {r10} {r100}");
}

#[test]
fn rate_table_matches_library() {
    let rows = rate_table(sparse_ard::sparsifiers::Method::Ardvi, &[1.0, 4.0], 2.0, 0.1, 0.3).unwrap();
    assert_eq!(rows.len(), 2);
    assert!((rows[0].psi - (0.01f64 / 2.0).sqrt()).abs() < 1e-15);
    assert!(rows[1].fp < rows[0].fp);
    assert!(rows[1].fn_rate.unwrap() > rows[0].fn_rate.unwrap());
    let zero = rate_table(sparse_ard::sparsifiers::Method::Ardvi, &[2.0], 1.0, 0.1, 0.0).unwrap();
    assert_eq!(zero[0].fn_rate, None);
}

#[test]
fn binary_rates_subcommand() {
    let out = Command::new(BIN)
        .args(["rates", "map_stsbl", "--param-grid", "0:2:3", "--rho", "1", "--sigma", "0.1", "--xi", "0.5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "param\tpsi\tfp\tfn");
    assert_eq!(lines.len(), 4);
    let psi: f64 = lines[2].split('\t').nth(1).unwrap().parse().unwrap();
    assert!((psi - (0.01f64 * 3.0).sqrt()).abs() < 1e-6);

    let bad = Command::new(BIN)
        .args(["rates", "nope", "--param-grid", "1:2:3", "--rho", "1", "--sigma", "0.1", "--xi", "0.5"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn binary_run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"experiment": "fourier", "m": 40, "modes": 5, "nonzero": 4, "trials": 2,
            "methods": [{"method": "ardvi", "values": [1, 5]}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = Command::new(BIN)
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "5", "--trials", "1"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let records = read_records(&out.join("records.csv")).unwrap();
    assert_eq!(records.len(), 1);
    let meta = fs::read_to_string(out.join("meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 5"));

    fs::write(&cfg, r#"{"experiment": "fourier", "modes": 0}"#).unwrap();
    let status =
        Command::new(BIN).args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // A timeout of one nanosecond fails every trial.
    fs::write(
        &cfg,
        r#"{"experiment": "linear", "m": 20, "d": 20, "nonzero": 2, "trials": 1, "timeout_secs": 1e-9,
            "methods": [{"method": "ardvi", "values": [2]}]}"#,
    )
    .unwrap();
    let status =
        Command::new(BIN).args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status().unwrap();
    assert_eq!(status.code(), Some(3));
    let records = read_records(&out.join("records.csv")).unwrap();
    assert!(records[0].status.contains("timed out"));
}
