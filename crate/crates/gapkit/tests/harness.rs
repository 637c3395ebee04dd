use gapkit::compare::{compare_methods, sign_test};
use gapkit::config::{DatasetSpec, ExperimentConfig, MechanismSpec, MethodSpec, Metric, Sweep};
use gapkit::experiment::run_experiment;

fn base(method: MethodSpec) -> ExperimentConfig {
    ExperimentConfig {
        name: None,
        seed: 11,
        replicates: 4,
        dataset: DatasetSpec::Gaussian { p: 4, n: 60, rho: 0.8 },
        mechanism: MechanismSpec::Mcar { rate: 0.2 },
        method,
        metrics: vec![Metric::Rmse],
        sweep: None,
    }
}

#[test]
fn no_missing_entries_reports_empty_evaluation_set() {
    let cfg = ExperimentConfig {
        replicates: 1,
        mechanism: MechanismSpec::Mcar { rate: 0.0 },
        ..base(MethodSpec::Mean)
    };
    let res = run_experiment(&cfg, 1).unwrap();
    assert!(res.rows.is_empty());
    assert_eq!(res.failed_runs, 0);
    assert_eq!(res.errors.len(), 1);
    assert_eq!(res.errors[0].stage, "metric:rmse");
    assert!(res.errors[0].message.contains("empty evaluation set"));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = ExperimentConfig {
        replicates: 6,
        metrics: vec![Metric::Rmse, Metric::Mae],
        ..base(MethodSpec::Knn { k: 3 })
    };
    assert_eq!(run_experiment(&cfg, 1).unwrap(), run_experiment(&cfg, 4).unwrap());
}

#[test]
fn hard_impute_error_grows_with_missing_rate() {
    let rates = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let cfg = ExperimentConfig {
        replicates: 10,
        dataset: DatasetSpec::LowRank { p: 30, n: 30, rank: 2, noise: 0.0 },
        method: MethodSpec::HardImpute { rank: 2, max_iter: 500 },
        metrics: vec![Metric::RelativeError],
        sweep: Some(Sweep { rates: rates.clone() }),
        ..base(MethodSpec::Mean)
    };
    let res = run_experiment(&cfg, 4).unwrap();
    // At 90% a replicate can lose a whole row; that run counts as unbounded error.
    assert!(res.errors.iter().all(|e| e.missing_rate == Some(0.9) && e.stage == "method"));
    let medians: Vec<f64> = (0..rates.len())
        .map(|s| {
            let mut v: Vec<f64> = res.rows.iter().filter(|r| r.setting == s).map(|r| r.value).collect();
            v.resize(10, f64::INFINITY);
            v.sort_by(f64::total_cmp);
            0.5 * (v[4] + v[5])
        })
        .collect();
    for w in medians.windows(2) {
        assert!(w[1] >= w[0], "{medians:?}");
    }
}

#[test]
fn self_comparison_is_a_tie() {
    let cfg = base(MethodSpec::Mean);
    let cmp = compare_methods(&[cfg.clone(), cfg], 2).unwrap();
    assert_eq!(cmp.pairs.len(), 1);
    let pair = &cmp.pairs[0];
    assert_eq!((pair.a_better, pair.b_better, pair.ties), (0, 0, 4));
    assert_eq!(pair.p_value, 1.0);
    assert_eq!(pair.method_b, "mean#2");
}

#[test]
fn conditional_gaussian_beats_mean_on_correlated_data() {
    let mk = |m| ExperimentConfig { replicates: 50, ..base(m) };
    let cmp = compare_methods(&[mk(MethodSpec::Mean), mk(MethodSpec::ConditionalGaussian)], 4).unwrap();
    let pair = &cmp.pairs[0];
    assert!(pair.b_better > pair.a_better);
    assert!(pair.p_value < 0.05, "{pair:?}");
    assert_eq!(cmp.ranking[0].method, "conditional_gaussian");
    assert!((cmp.ranking[1].p_vs_best - pair.p_value).abs() < 1e-15);
    // Oracle: the two-sided sign-test value recomputed from the counts.
    assert_eq!(pair.p_value, sign_test(pair.a_better, pair.b_better));
}

#[test]
fn mismatched_mechanisms_rejected() {
    let a = base(MethodSpec::Mean);
    let b = ExperimentConfig {
        mechanism: MechanismSpec::Mnar { phi0: 0.0, phi1: 1.0 },
        ..base(MethodSpec::Mean)
    };
    let err = compare_methods(&[a, b], 1).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("mechanism"));
}

#[test]
fn series_baselines_and_model_imputation_run() {
    let mk = |m| ExperimentConfig {
        replicates: 3,
        dataset: DatasetSpec::Ar1t { n: 300, mu: 0.01, a: 0.9, sigma: 0.1, nu: 4.0 },
        mechanism: MechanismSpec::Mcar { rate: 0.2 },
        ..base(m)
    };
    let cmp = compare_methods(
        &[mk(MethodSpec::Locf), mk(MethodSpec::Linear), mk(MethodSpec::Ar1t { iters: 100, draws: 10 })],
        3,
    )
    .unwrap();
    assert!(cmp.runs.iter().all(|r| r.failed_runs == 0));
    assert_eq!(cmp.ranking.len(), 3);
}
