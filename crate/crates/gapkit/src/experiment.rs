//! Replicated experiments: generate data, mask, impute, score.

use std::io::Write;
use std::path::Path;

use gapkit_core::completion::{hard_impute, soft_impute, CompletionOptions};
use gapkit_core::em::{em_gaussian_fit, naive_init, EStep, EmConfig, SaemSchedule};
use gapkit_core::imputation::{impute_conditional_gaussian, impute_iterative, impute_knn, impute_mean, IterativeSpec};
use gapkit_core::mechanisms::{gen_mask, Mechanism};
use gapkit_core::timeseries::{ar1_ols_init, ar1t_fit_saem, ar1t_impute_draw, Ar1Options};
use gapkit_core::{rmse_missing, DMatrix, Error, IncompleteMatrix, Mask, SeedSpec};

use crate::config::{ExperimentConfig, Manifest, MechanismSpec, MethodSpec, Metric};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, write_file};
use crate::synth::generate;
use crate::threads::par_map;

pub const RESULTS_HEADER: [&str; 4] = ["replicate", "missing_rate", "metric", "value"];
pub const ERRORS_HEADER: [&str; 4] = ["replicate", "missing_rate", "stage", "message"];

/// Independent stream for one replicate and purpose, leaving 2²⁸
/// substreams for the method.
pub fn stream(seed: u64, replicate: usize, purpose: u64) -> SeedSpec {
    SeedSpec::with_stream(seed, ((replicate as u64) << 32) | (purpose << 28))
}

const DATA: u64 = 0;
const MASK: u64 = 1;
const METHOD: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub setting: usize,
    pub replicate: usize,
    pub missing_rate: Option<f64>,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub setting: usize,
    pub replicate: usize,
    pub missing_rate: Option<f64>,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub label: String,
    pub rows: Vec<ResultRow>,
    pub errors: Vec<ErrorRow>,
    /// (setting, replicate) runs attempted.
    pub runs: usize,
    /// Runs whose data, mask or method step failed.
    pub failed_runs: usize,
}

fn along_rows(y: &IncompleteMatrix, mut fill: impl FnMut(&[f64]) -> Vec<f64>) -> Result<DMatrix<f64>, Error> {
    let (p, n) = y.shape();
    let mut out = DMatrix::zeros(p, n);
    for i in 0..p {
        if y.mask().row_observed_count(i) == 0 {
            return Err(Error::FullyMissingRow(i));
        }
        let row: Vec<f64> = (0..n).map(|j| y.get(i, j).unwrap_or(f64::NAN)).collect();
        for (j, v) in fill(&row).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

fn locf(row: &[f64]) -> Vec<f64> {
    let first = row.iter().copied().find(|v| !v.is_nan()).unwrap_or(f64::NAN);
    let mut last = first;
    row.iter()
        .map(|&v| {
            if !v.is_nan() {
                last = v;
            }
            last
        })
        .collect()
}

fn linear(row: &[f64]) -> Vec<f64> {
    let obs: Vec<usize> = (0..row.len()).filter(|&t| !row[t].is_nan()).collect();
    (0..row.len())
        .map(|t| {
            let k = obs.partition_point(|&o| o < t);
            match (k.checked_sub(1).map(|k| obs[k]), obs.get(k).copied()) {
                (_, Some(hi)) if hi == t => row[t],
                (Some(lo), Some(hi)) => row[lo] + (row[hi] - row[lo]) * (t - lo) as f64 / (hi - lo) as f64,
                (Some(lo), None) => row[lo],
                (None, Some(hi)) => row[hi],
                (None, None) => f64::NAN,
            }
        })
        .collect()
}

/// Completes `y` with `method`. Observed entries are returned unchanged.
pub fn run_method(method: &MethodSpec, y: &IncompleteMatrix, seed: SeedSpec) -> Result<DMatrix<f64>, Error> {
    let out = match *method {
        MethodSpec::Mean => impute_mean(y)?,
        MethodSpec::Knn { k } => impute_knn(y, k)?,
        MethodSpec::ConditionalGaussian => {
            let fit = em_gaussian_fit(y, &naive_init(y)?, &EmConfig::default())?;
            impute_conditional_gaussian(y, &fit.params, false, seed)?
        }
        MethodSpec::Iterative { ridge_penalty, max_sweeps } => {
            let spec = IterativeSpec {
                ridge_penalty,
                max_sweeps,
                ..IterativeSpec::default()
            };
            impute_iterative(y, &spec, seed)?.completed
        }
        MethodSpec::SoftImpute { lambda, max_iter } => {
            soft_impute(y, lambda, CompletionOptions { max_iter, ..CompletionOptions::default() }, None)?.completed
        }
        MethodSpec::HardImpute { rank, max_iter } => {
            hard_impute(y, rank, CompletionOptions { max_iter, ..CompletionOptions::default() }, None)?.completed
        }
        MethodSpec::Locf => along_rows(y, locf)?,
        MethodSpec::Linear => along_rows(y, linear)?,
        MethodSpec::Ar1t { iters, draws } => {
            if draws == 0 {
                return Err(Error::InvalidParameter("ar1t needs at least one draw".into()));
            }
            let mut failure = None;
            let out = along_rows(y, |row| {
                let run = || -> Result<Vec<f64>, Error> {
                    let cfg = EmConfig {
                        e_step: EStep::Saem(SaemSchedule::default()),
                        max_iter: iters,
                        seed,
                        estimate_nu: true,
                        ..EmConfig::default()
                    };
                    let fit = ar1t_fit_saem(row, &ar1_ols_init(row)?, &cfg, &Ar1Options::default())?;
                    let mut mean = vec![0.0; row.len()];
                    for k in 0..draws {
                        let d = ar1t_impute_draw(row, &fit.params, seed.substream(1 + k as u64))?;
                        for (m, v) in mean.iter_mut().zip(d) {
                            *m += v / draws as f64;
                        }
                    }
                    Ok(mean)
                };
                run().unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    vec![f64::NAN; row.len()]
                })
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            out
        }
    };
    Ok(y.pinned(&out))
}

pub fn compute_metric(metric: Metric, xhat: &DMatrix<f64>, truth: &DMatrix<f64>, mask: &Mask) -> Result<f64, Error> {
    match metric {
        Metric::Rmse => rmse_missing(xhat, truth, mask),
        Metric::Mae => {
            let (mut sum, mut count) = (0.0, 0usize);
            for j in 0..truth.ncols() {
                for i in mask.missing_rows(j) {
                    sum += (xhat[(i, j)] - truth[(i, j)]).abs();
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::EmptyEvaluationSet);
            }
            Ok(sum / count as f64)
        }
        Metric::RelativeError => {
            let norm = truth.norm();
            if norm == 0.0 {
                return Err(Error::EmptyEvaluationSet);
            }
            Ok((xhat - truth).norm() / norm)
        }
    }
}

fn mechanism(spec: MechanismSpec, rate: Option<f64>) -> Mechanism {
    match spec {
        MechanismSpec::Mcar { rate: r } => Mechanism::Mcar { rate: rate.unwrap_or(r) },
        MechanismSpec::Mar { driver_row, phi0, phi1 } => Mechanism::Mar { driver_row, phi0, phi1 },
        MechanismSpec::Mnar { phi0, phi1 } => Mechanism::MnarSelfMask { phi0, phi1 },
    }
}

struct RunOutcome {
    rows: Vec<ResultRow>,
    errors: Vec<ErrorRow>,
    failed: bool,
}

fn run_one(cfg: &ExperimentConfig, setting: usize, rate: Option<f64>, replicate: usize) -> RunOutcome {
    let err = |stage: &str, e: &dyn std::fmt::Display| ErrorRow {
        setting,
        replicate,
        missing_rate: rate,
        stage: stage.to_string(),
        message: e.to_string(),
    };
    let fail = |row| RunOutcome {
        rows: Vec::new(),
        errors: vec![row],
        failed: true,
    };
    let truth = match generate(&cfg.dataset, stream(cfg.seed, replicate, DATA)) {
        Ok(x) => x,
        Err(e) => return fail(err("data", &e)),
    };
    let mask = match gen_mask(truth.shape(), &mechanism(cfg.mechanism, rate), Some(&truth), stream(cfg.seed, replicate, MASK)) {
        Ok(m) => m,
        Err(e) => return fail(err("mask", &e)),
    };
    let y = match IncompleteMatrix::new(truth.clone(), mask.clone()) {
        Ok(y) => y,
        Err(e) => return fail(err("mask", &e)),
    };
    let xhat = match run_method(&cfg.method, &y, stream(cfg.seed, replicate, METHOD)) {
        Ok(x) => x,
        Err(e) => return fail(err("method", &e)),
    };
    let mut out = RunOutcome {
        rows: Vec::new(),
        errors: Vec::new(),
        failed: false,
    };
    for &metric in &cfg.metrics {
        match compute_metric(metric, &xhat, &truth, &mask) {
            Ok(value) => out.rows.push(ResultRow {
                setting,
                replicate,
                missing_rate: rate,
                metric,
                value,
            }),
            Err(e) => out.errors.push(err(&format!("metric:{}", metric.name()), &e)),
        }
    }
    out
}

/// Runs every (setting, replicate) pair on up to `threads` workers.
/// Failures are recorded per run; the output does not depend on `threads`.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> CliResult<ExperimentResults> {
    cfg.validate()?;
    let settings = cfg.settings();
    let reps = cfg.replicates;
    let outcomes = par_map(settings.len() * reps, threads, |k| run_one(cfg, k / reps, settings[k / reps], k % reps));
    let mut res = ExperimentResults {
        label: cfg.label(),
        rows: Vec::new(),
        errors: Vec::new(),
        runs: outcomes.len(),
        failed_runs: 0,
    };
    for o in outcomes {
        res.failed_runs += o.failed as usize;
        res.rows.extend(o.rows);
        res.errors.extend(o.errors);
    }
    Ok(res)
}

fn rate_field(r: Option<f64>) -> String {
    r.map(fmt_f64).unwrap_or_default()
}

pub fn write_results_csv(out: impl Write, rows: &[ResultRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([r.replicate.to_string(), rate_field(r.missing_rate), r.metric.name().to_string(), fmt_f64(r.value)])?;
    }
    w.flush()
}

pub fn write_errors_csv(out: impl Write, rows: &[ErrorRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ERRORS_HEADER)?;
    for r in rows {
        w.write_record([r.replicate.to_string(), rate_field(r.missing_rate), r.stage.clone(), r.message.clone()])?;
    }
    w.flush()
}

/// Writes `results.csv`, `errors.csv` and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, res: &ExperimentResults) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_file(&dir.join("results.csv"), |w| write_results_csv(w, &res.rows))?;
    write_file(&dir.join("errors.csv"), |w| write_errors_csv(w, &res.errors))?;
    let manifest = serde_json::to_string_pretty(&Manifest::new(cfg.clone())).expect("config serializes");
    write_file(&dir.join("manifest.json"), |w| writeln!(w, "{manifest}"))
}
