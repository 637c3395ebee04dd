//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gapkit_core::completion::{complete, CompletionMode, CompletionOptions};
use gapkit_core::em::{
    em_gaussian_fit, em_student_fit, naive_init, EStep, EmConfig, MStep, SaemSchedule, StudentTParams,
};
use gapkit_core::graph::{
    gmrf_learn, recover, stsrgl_fit, var_learn, Fidelity, GmrfOptions, RecoveryConfig, Regularizer, Smoothness,
    StsrglConfig, UndirectedGraph, VarOptions,
};
use gapkit_core::mechanisms::{gen_mask, Mechanism};
use gapkit_core::mnar::{sem_selection_fit, Phi, RowGaussian, SemConfig};
use gapkit_core::structcov::{em_structured_fit, CovStructure};
use gapkit_core::subspace::{petrels_init, petrels_update, robust_update, RobustConfig};
use gapkit_core::timeseries::{ar1_ols_init, ar1t_fit_saem, ar1t_impute_draw, Ar1Options, Ar1StudentParams};
use gapkit_core::{sep, DMatrix, DVector, Mask, SeedSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::compare::{compare_methods, write_pairs_csv, write_ranking_csv};
use crate::config::{load_config, MethodSpec};
use crate::error::{config, CliError, CliResult};
use crate::experiment::{run_experiment, run_method, write_outputs};
use crate::io::{open_output, read_edges, read_series, read_table, write_columns, write_edges, write_file, write_table};
use crate::threads::{par_map, thread_count};

#[derive(Debug, Parser)]
#[command(name = "gapkit", version, about = "Estimation, imputation and recovery with missing data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blank out entries of a table under a missingness mechanism.
    Mask(MaskArgs),
    /// Fill the gaps of a table.
    Impute(ImputeArgs),
    /// Fit a Gaussian or Student-t model by EM; prints JSON.
    Estimate(EstimateArgs),
    /// Fit the self-masked Gaussian selection model; prints JSON.
    MnarFit(MnarArgs),
    /// Low-rank matrix completion.
    Complete(CompleteArgs),
    /// Stream the rows of a table through a subspace tracker.
    Track(TrackArgs),
    /// Graph signal recovery and graph learning.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Fit the AR(1) Student-t model to a gappy series; prints JSON.
    TsFit(TsFitArgs),
    /// Posterior draws for the gaps of a series.
    TsImpute(TsImputeArgs),
    /// Run a replicated experiment from a config file.
    Bench(BenchArgs),
    /// Run several configs on aligned data and compare them.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct Io {
    /// Input CSV: one sample per line, one variable per field.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; standard output when omitted or `-`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MechanismArg {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[command(flatten)]
    pub io: Io,
    #[arg(long, value_enum, default_value = "mcar")]
    pub mechanism: MechanismArg,
    /// Missing probability (mcar).
    #[arg(long, default_value_t = 0.2)]
    pub rate: f64,
    /// Fully observed variable driving the missingness (mar).
    #[arg(long, default_value_t = 0)]
    pub driver_row: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub phi0: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub phi1: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the 0/1 observation mask here.
    #[arg(long)]
    pub mask_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImputeMethod {
    Mean,
    Knn,
    ConditionalGaussian,
    Iterative,
    Locf,
    Linear,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub io: Io,
    #[arg(long, value_enum, default_value = "mean")]
    pub method: ImputeMethod,
    /// Neighbours for knn.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Relative ridge penalty for iterative.
    #[arg(long, default_value_t = 1e-3)]
    pub ridge: f64,
    #[arg(long, default_value_t = 100)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Model {
    Gaussian,
    Student,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EVariant {
    Exact,
    Sem,
    Mcem,
    Saem,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MVariant {
    Full,
    Ecm,
    Ecme,
    Gem,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StructureArg {
    None,
    Factor,
    Floor,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub model: Model,
    #[arg(long, value_enum, default_value = "exact")]
    pub evariant: EVariant,
    /// Draws per iteration for mcem.
    #[arg(long, default_value_t = 10)]
    pub draws: usize,
    #[arg(long, value_enum, default_value = "full")]
    pub mvariant: MVariant,
    /// Inner steps for gem.
    #[arg(long, default_value_t = 1)]
    pub inner_steps: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub maxiter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial degrees of freedom (student).
    #[arg(long, default_value_t = 5.0)]
    pub nu: f64,
    /// Estimate the degrees of freedom (student).
    #[arg(long)]
    pub estimate_nu: bool,
    /// Covariance structure (gaussian only).
    #[arg(long, value_enum, default_value = "none")]
    pub structure: StructureArg,
    #[arg(long, default_value_t = 1)]
    pub factor_rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise_floor: f64,
}

#[derive(Debug, Args)]
pub struct MnarArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Initial mechanism intercept.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub phi0: f64,
    /// Initial mechanism slope.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub phi1: f64,
    /// Hold the slope at this value.
    #[arg(long, allow_negative_numbers = true)]
    pub fixed_slope: Option<f64>,
    #[arg(long, default_value_t = 600)]
    pub iters: usize,
    #[arg(long, default_value_t = 300)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CompletionArg {
    Soft,
    Hard,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[command(flatten)]
    pub io: Io,
    #[arg(long, value_enum, default_value = "soft")]
    pub method: CompletionArg,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub maxiter: usize,
    /// JSON summary (rank, iterations, objective trace).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Input CSV, one streamed sample per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Final basis, one line per dimension.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub forget: f64,
    /// Use the outlier-robust tracker.
    #[arg(long)]
    pub robust: bool,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// True basis (same layout as the output); adds `sep` to the summary.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GraphCommand {
    /// Fill missing node values of graph signals.
    Recover(RecoverArgs),
    /// Learn a graph from complete signals.
    Learn(LearnArgs),
    /// Joint imputation and spatio-temporal graph learning.
    Joint(JointArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SmoothnessArg {
    Tikhonov,
    Tv,
    SpatioTemporal,
    Directed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FidelityArg {
    Exact,
    Squared,
    Huber,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegularizerArg {
    None,
    Frobenius,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// Signals, one time step per line, one node per field.
    #[command(flatten)]
    pub io: Io,
    /// Edge list `i,j,w`; directed smoothness reads it as `i -> j`.
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long, value_enum, default_value = "tikhonov")]
    pub smoothness: SmoothnessArg,
    /// Exponent for directed smoothness (1 or 2).
    #[arg(long, default_value_t = 2.0)]
    pub p_norm: f64,
    #[arg(long, value_enum, default_value = "exact")]
    pub fidelity: FidelityArg,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, value_enum, default_value = "none")]
    pub regularizer: RegularizerArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LearnModel {
    Gmrf,
    Var,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Edge list output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gmrf")]
    pub model: LearnModel,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Edges with |weight| at or below this are dropped.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct JointArgs {
    #[command(flatten)]
    pub io: Io,
    #[arg(long, default_value_t = 0.0)]
    pub alpha_l: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_a: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 5)]
    pub cycles: usize,
    /// Learned undirected edges.
    #[arg(long)]
    pub edges_output: Option<PathBuf>,
    /// Learned temporal adjacency as an edge list.
    #[arg(long)]
    pub temporal_output: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct SaemArgs {
    /// SAEM iterations.
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 20)]
    pub burn_in: usize,
    /// Initial degrees of freedom.
    #[arg(long, default_value_t = 10.0)]
    pub nu: f64,
    /// Keep the degrees of freedom at `--nu`.
    #[arg(long)]
    pub fix_nu: bool,
    #[arg(long)]
    pub stationary: bool,
    /// Interior gaps longer than this raise a warning.
    #[arg(long, default_value_t = 100)]
    pub max_gap: usize,
}

#[derive(Debug, Args)]
pub struct TsFitArgs {
    /// Single-column CSV; empty fields are gaps.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub saem: SaemArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-iteration parameters as CSV.
    #[arg(long)]
    pub chain_output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TsImputeArgs {
    #[command(flatten)]
    pub io: Io,
    #[arg(long, default_value_t = 10)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parameters from `ts-fit`; fitted first when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub saem: SaemArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// TOML or JSON config, or a manifest from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for results.csv, errors.csv and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Two or more configs sharing dataset, mechanism, seed and replicates.
    #[arg(long = "config", required = true, num_args = 1)]
    pub configs: Vec<PathBuf>,
    /// Directory for pairs.csv and ranking.csv; the ranking goes to
    /// standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    let mut out = open_output(path)?;
    writeln!(out, "{text}").and_then(|_| out.flush()).map_err(|e| CliError::io(path.unwrap_or(Path::new("-")), e))
}

fn emit_table(path: Option<&Path>, x: &DMatrix<f64>, mask: Option<&Mask>, header: Option<&[String]>) -> CliResult<()> {
    let mut out = open_output(path)?;
    write_table(&mut out, x, mask, header)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path.unwrap_or(Path::new("-")), e))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn run_mask(a: &MaskArgs) -> CliResult<()> {
    let table = read_table(&a.io.input)?;
    let y = &table.data;
    let mechanism = match a.mechanism {
        MechanismArg::Mcar => Mechanism::Mcar { rate: a.rate },
        MechanismArg::Mar => {
            if a.driver_row >= y.nrows() || y.mask().row_observed_count(a.driver_row) != y.ncols() {
                return Err(config("mar needs a fully observed driver column"));
            }
            Mechanism::Mar { driver_row: a.driver_row, phi0: a.phi0, phi1: a.phi1 }
        }
        MechanismArg::Mnar => Mechanism::MnarSelfMask { phi0: a.phi0, phi1: a.phi1 },
    };
    let filled = y.filled_with(0.0);
    let drawn = gen_mask(y.shape(), &mechanism, Some(&filled), SeedSpec::new(a.seed))?;
    let mask = Mask::from_fn(y.nrows(), y.ncols(), |i, j| y.is_observed(i, j) && drawn.is_observed(i, j));
    emit_table(a.io.output.as_deref(), &filled, Some(&mask), table.header.as_deref())?;
    if let Some(path) = &a.mask_output {
        let ind = mask.to_indicator();
        write_file(path, |w| write_table(w, &ind, None, table.header.as_deref()))?;
    }
    Ok(())
}

fn run_impute(a: &ImputeArgs) -> CliResult<()> {
    let table = read_table(&a.io.input)?;
    let method = match a.method {
        ImputeMethod::Mean => MethodSpec::Mean,
        ImputeMethod::Knn => MethodSpec::Knn { k: a.k },
        ImputeMethod::ConditionalGaussian => MethodSpec::ConditionalGaussian,
        ImputeMethod::Iterative => MethodSpec::Iterative { ridge_penalty: a.ridge, max_sweeps: a.max_sweeps },
        ImputeMethod::Locf => MethodSpec::Locf,
        ImputeMethod::Linear => MethodSpec::Linear,
    };
    let x = run_method(&method, &table.data, SeedSpec::new(a.seed))?;
    emit_table(a.io.output.as_deref(), &x, None, table.header.as_deref())
}

fn em_config(a: &EstimateArgs) -> EmConfig {
    EmConfig {
        e_step: match a.evariant {
            EVariant::Exact => EStep::Exact,
            EVariant::Sem => EStep::Sem,
            EVariant::Mcem => EStep::Mcem { draws: a.draws },
            EVariant::Saem => EStep::Saem(SaemSchedule::default()),
        },
        m_step: match a.mvariant {
            MVariant::Full => MStep::Full,
            MVariant::Ecm => MStep::Ecm,
            MVariant::Ecme => MStep::Ecme,
            MVariant::Gem => MStep::Gem { inner_steps: a.inner_steps },
        },
        tol: a.tol,
        max_iter: a.maxiter,
        seed: SeedSpec::new(a.seed),
        estimate_nu: a.estimate_nu,
    }
}

fn run_estimate(a: &EstimateArgs) -> CliResult<()> {
    let y = read_table(&a.input)?.data;
    let cfg = em_config(a);
    let value = match a.model {
        Model::Gaussian => {
            let fit = match a.structure {
                StructureArg::None => em_gaussian_fit(&y, &naive_init(&y)?, &cfg)?,
                StructureArg::Factor => em_structured_fit(&y, CovStructure::FactorModel { rank: a.factor_rank }, &cfg)?.fit,
                StructureArg::Floor => {
                    em_structured_fit(&y, CovStructure::NoiseFloor { sigma_known: a.noise_floor }, &cfg)?.fit
                }
            };
            json!({
                "model": "gaussian",
                "mu": vec_of(&fit.params.mu),
                "sigma": rows(&fit.params.sigma),
                "trace": fit.trace,
                "iterations": fit.iterations,
                "converged": fit.converged,
            })
        }
        Model::Student => {
            if !matches!(a.structure, StructureArg::None) {
                return Err(config("covariance structure is only available for the gaussian model"));
            }
            let init = naive_init(&y)?;
            let init = StudentTParams::new(init.mu, init.sigma, a.nu)?;
            let fit = em_student_fit(&y, &init, &cfg)?;
            json!({
                "model": "student",
                "mu": vec_of(&fit.params.mu),
                "sigma": rows(&fit.params.sigma),
                "nu": fit.params.nu,
                "trace": fit.trace,
                "iterations": fit.iterations,
                "converged": fit.converged,
            })
        }
    };
    write_json(a.output.as_deref(), &value)
}

fn run_mnar(a: &MnarArgs) -> CliResult<()> {
    let y = read_table(&a.input)?.data;
    let p = y.nrows();
    let (mut mu, mut sd) = (DVector::zeros(p), DVector::zeros(p));
    for i in 0..p {
        let obs = y.observed_row(i);
        if obs.len() < 2 {
            return Err(config(format!("variable {i} has fewer than 2 observed values")));
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let v = obs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / obs.len() as f64;
        mu[i] = m;
        sd[i] = v.sqrt().max(1e-8);
    }
    let cfg = SemConfig {
        iters: a.iters,
        burn_in: a.burn_in,
        seed: SeedSpec::new(a.seed),
        fixed_slope: a.fixed_slope,
        ..SemConfig::default()
    };
    let fit = sem_selection_fit(&y, &RowGaussian { mu, sigma: sd }, Phi::new(a.phi0, a.phi1), &cfg)?;
    write_json(
        a.output.as_deref(),
        &json!({
            "mu": vec_of(&fit.theta.mu),
            "sigma": vec_of(&fit.theta.sigma),
            "phi0": fit.phi.phi0,
            "phi1": fit.phi.phi1,
            "separation_warnings": fit.separation_warnings,
            "fallback_draws": fit.fallback_draws,
        }),
    )
}

fn run_complete(a: &CompleteArgs) -> CliResult<()> {
    let table = read_table(&a.io.input)?;
    let mode = match a.method {
        CompletionArg::Soft => CompletionMode::Soft { lambda: a.lambda },
        CompletionArg::Hard => CompletionMode::Hard { rank: a.rank },
    };
    let res = complete(&table.data, mode, CompletionOptions { tol: a.tol, max_iter: a.maxiter })?;
    emit_table(a.io.output.as_deref(), &res.completed, None, table.header.as_deref())?;
    if let Some(path) = &a.report {
        write_json(
            Some(path),
            &json!({
                "rank": res.rank,
                "iterations": res.iterations,
                "converged": res.converged,
                "objective": res.objective,
            }),
        )?;
    }
    Ok(())
}

fn run_track(a: &TrackArgs) -> CliResult<()> {
    let y = read_table(&a.input)?.data;
    let (p, n) = y.shape();
    let mut state = petrels_init(p, a.rank, a.forget, SeedSpec::new(a.seed))?;
    let robust = RobustConfig { rho: a.rho, alpha: a.alpha, ..RobustConfig::default() };
    let mut underdetermined = 0usize;
    for t in 0..n {
        let col = DVector::from_fn(p, |i, _| y.get(i, t).unwrap_or(0.0));
        let mask: Vec<bool> = (0..p).map(|i| y.is_observed(i, t)).collect();
        let under = if a.robust {
            robust_update(&mut state, &col, &mask, &robust)?.stage1.underdetermined
        } else {
            petrels_update(&mut state, &col, &mask)?.underdetermined
        };
        underdetermined += under as usize;
    }
    emit_table(a.output.as_deref(), &state.u.transpose(), None, None)?;
    let mut summary = json!({
        "steps": n,
        "resets": state.resets,
        "underdetermined_steps": underdetermined,
    });
    if let Some(path) = &a.truth {
        let truth = read_table(path)?.data.filled_with(f64::NAN).transpose();
        if truth.iter().any(|v| v.is_nan()) {
            return Err(config("true basis must be complete"));
        }
        summary["sep"] = json!(sep(&state.u, &truth)?);
    }
    eprintln!("{}", serde_json::to_string(&summary).expect("json value serializes"));
    Ok(())
}

fn run_recover(a: &RecoverArgs) -> CliResult<()> {
    let table = read_table(&a.io.input)?;
    let p = table.data.nrows();
    let edges = read_edges(&a.edges, p)?;
    let smoothness = match a.smoothness {
        SmoothnessArg::Tikhonov => Smoothness::Tikhonov,
        SmoothnessArg::Tv => Smoothness::TotalVariation,
        SmoothnessArg::SpatioTemporal => Smoothness::SpatioTemporal,
        SmoothnessArg::Directed => Smoothness::DirectedVariation { p_norm: a.p_norm },
    };
    let w = match smoothness {
        Smoothness::DirectedVariation { .. } => {
            let mut w = DMatrix::zeros(p, p);
            for &(i, j, v) in &edges {
                w[(i, j)] += v;
            }
            w
        }
        _ => UndirectedGraph::from_edges(p, &edges)?.weights().clone(),
    };
    let cfg = RecoveryConfig {
        fidelity: match a.fidelity {
            FidelityArg::Exact => Fidelity::ExactConstraint,
            FidelityArg::Squared => Fidelity::Squared,
            FidelityArg::Huber => Fidelity::Huber { delta: a.delta },
        },
        smoothness,
        alpha: a.alpha,
        beta: a.beta,
        regularizer: match a.regularizer {
            RegularizerArg::None => Regularizer::None,
            RegularizerArg::Frobenius => Regularizer::Frobenius,
        },
        ..RecoveryConfig::default()
    };
    let x = recover(&table.data, &w, &cfg)?;
    emit_table(a.io.output.as_deref(), &x, None, table.header.as_deref())
}

fn run_learn(a: &LearnArgs) -> CliResult<()> {
    let y = read_table(&a.input)?.data;
    if y.count_missing() > 0 {
        return Err(config("graph learn needs complete signals; use `graph joint` for gappy data"));
    }
    let x = y.filled_with(0.0);
    let edges = match a.model {
        LearnModel::Gmrf => {
            let n = x.ncols() as f64;
            let mean = x.column_mean();
            let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[i]);
            let s = &centered * centered.transpose() / n;
            gmrf_learn(&s, a.alpha, &GmrfOptions::default())?.graph.edges(a.threshold)
        }
        LearnModel::Var => {
            let g = var_learn(&x, a.alpha, &VarOptions::default())?;
            let mut edges = Vec::new();
            for i in 0..g.a.nrows() {
                for j in 0..g.a.ncols() {
                    if g.a[(i, j)].abs() > a.threshold {
                        edges.push((i, j, g.a[(i, j)]));
                    }
                }
            }
            edges
        }
    };
    let mut out = open_output(a.output.as_deref())?;
    write_edges(&mut out, &edges)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(a.output.clone().unwrap_or_else(|| "-".into()), e))
}

fn run_joint(a: &JointArgs) -> CliResult<()> {
    let table = read_table(&a.io.input)?;
    let cfg = StsrglConfig {
        alpha_l: a.alpha_l,
        alpha_a: a.alpha_a,
        sigma2: a.sigma2,
        cycles: a.cycles,
        ..StsrglConfig::default()
    };
    let fit = stsrgl_fit(&table.data, &cfg)?;
    emit_table(a.io.output.as_deref(), &fit.x, None, table.header.as_deref())?;
    if let Some(path) = &a.edges_output {
        let edges = fit.graph.edges(a.threshold);
        write_file(path, |w| write_edges(w, &edges))?;
    }
    if let Some(path) = &a.temporal_output {
        let m = &fit.a.a;
        let edges: Vec<_> = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j, m[(i, j)])))
            .filter(|e| e.2.abs() > a.threshold)
            .collect();
        write_file(path, |w| write_edges(w, &edges))?;
    }
    eprintln!("{}", serde_json::to_string(&json!({ "objective": fit.objective })).expect("json value serializes"));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    mu: f64,
    a: f64,
    sigma: f64,
    nu: f64,
}

fn fit_series(y: &[f64], s: &SaemArgs, seed: u64) -> CliResult<gapkit_core::timeseries::Ar1Fit> {
    let init = Ar1StudentParams { nu: s.nu, ..ar1_ols_init(y)? };
    let cfg = EmConfig {
        e_step: EStep::Saem(SaemSchedule { burn_in: s.burn_in, ..SaemSchedule::default() }),
        max_iter: s.iters,
        seed: SeedSpec::new(seed),
        estimate_nu: !s.fix_nu,
        ..EmConfig::default()
    };
    let opts = Ar1Options { max_gap: s.max_gap, stationary: s.stationary, ..Ar1Options::default() };
    let fit = ar1t_fit_saem(y, &init, &cfg, &opts)?;
    for (start, len) in &fit.long_gaps {
        eprintln!("warning: gap of {len} points at index {start} exceeds --max-gap {}", s.max_gap);
    }
    Ok(fit)
}

fn run_ts_fit(a: &TsFitArgs) -> CliResult<()> {
    let (_, y) = read_series(&a.input)?;
    let fit = fit_series(&y, &a.saem, a.seed)?;
    if let Some(path) = &a.chain_output {
        let cols: Vec<Vec<f64>> = vec![
            fit.chain.iter().map(|p| p.mu).collect(),
            fit.chain.iter().map(|p| p.a).collect(),
            fit.chain.iter().map(|p| p.sigma).collect(),
            fit.chain.iter().map(|p| p.nu).collect(),
        ];
        let header = ["mu", "a", "sigma", "nu"].map(String::from);
        write_file(path, |w| write_columns(w, &header, &cols))?;
    }
    let p = fit.params;
    write_json(
        a.output.as_deref(),
        &json!({
            "mu": p.mu,
            "a": p.a,
            "sigma": p.sigma,
            "nu": p.nu,
            "iterations": fit.chain.len(),
            "acceptance": fit.acceptance,
            "long_gaps": fit.long_gaps,
        }),
    )
}

fn run_ts_impute(a: &TsImputeArgs) -> CliResult<()> {
    let (_, y) = read_series(&a.io.input)?;
    if a.draws == 0 {
        return Err(config("--draws must be at least 1"));
    }
    let params = match &a.params {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let p: ParamsFile = serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
            Ar1StudentParams::new(p.mu, p.a, p.sigma, p.nu)?
        }
        None => fit_series(&y, &a.saem, a.seed)?.params,
    };
    let base = SeedSpec::new(a.seed);
    let draws = par_map(a.draws, thread_count()?, |k| ar1t_impute_draw(&y, &params, base.substream(k as u64)));
    let draws: Vec<Vec<f64>> = draws.into_iter().collect::<Result<_, _>>()?;
    let header: Vec<String> = (1..=a.draws).map(|k| format!("draw_{k}")).collect();
    let mut out = open_output(a.io.output.as_deref())?;
    write_columns(&mut out, &header, &draws)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(a.io.output.clone().unwrap_or_else(|| "-".into()), e))
}

fn run_bench(a: &BenchArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let res = run_experiment(&cfg, thread_count()?)?;
    write_outputs(&a.out, &cfg, &res)?;
    for e in &res.errors {
        eprintln!("replicate {} [{}]: {}", e.replicate, e.stage, e.message);
    }
    if res.failed_runs == res.runs {
        return Err(CliError::AllFailed(res.runs));
    }
    Ok(())
}

fn run_compare(a: &CompareArgs) -> CliResult<()> {
    let configs = a.configs.iter().map(|p| load_config(p)).collect::<CliResult<Vec<_>>>()?;
    let cmp = compare_methods(&configs, thread_count()?)?;
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            write_file(&dir.join("pairs.csv"), |w| write_pairs_csv(w, &cmp.pairs))?;
            write_file(&dir.join("ranking.csv"), |w| write_ranking_csv(w, &cmp.ranking))?;
        }
        None => {
            let mut out = open_output(None)?;
            write_ranking_csv(&mut out, &cmp.ranking).map_err(|e| CliError::io("-", e))?;
        }
    }
    if cmp.runs.iter().all(|r| r.failed_runs == r.runs) {
        return Err(CliError::AllFailed(cmp.runs.iter().map(|r| r.runs).sum()));
    }
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Mask(a) => run_mask(a),
        Command::Impute(a) => run_impute(a),
        Command::Estimate(a) => run_estimate(a),
        Command::MnarFit(a) => run_mnar(a),
        Command::Complete(a) => run_complete(a),
        Command::Track(a) => run_track(a),
        Command::Graph(GraphCommand::Recover(a)) => run_recover(a),
        Command::Graph(GraphCommand::Learn(a)) => run_learn(a),
        Command::Graph(GraphCommand::Joint(a)) => run_joint(a),
        Command::TsFit(a) => run_ts_fit(a),
        Command::TsImpute(a) => run_ts_impute(a),
        Command::Bench(a) => run_bench(a),
        Command::Compare(a) => run_compare(a),
    }
}
