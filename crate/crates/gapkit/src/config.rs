//! Experiment configuration.
//!
//! A config is a TOML file (or JSON when the file name ends in `.json`):
//!
//! ```toml
//! name = "mean-baseline"      # optional label used by `compare`
//! seed = 7
//! replicates = 20
//! metrics = ["rmse", "mae"]   # default ["rmse"]
//!
//! [dataset]
//! kind = "gaussian"           # gaussian | low_rank | ar1t | csv
//! p = 5
//! n = 200
//! rho = 0.6
//!
//! [mechanism]
//! kind = "mcar"               # mcar | mar | mnar
//! rate = 0.2
//!
//! [method]
//! kind = "knn"
//! k = 5
//!
//! [sweep]                     # optional, MCAR only
//! rates = [0.1, 0.3, 0.5]
//! ```
//!
//! A manifest written by `bench` is itself a valid config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Zero-mean Gaussian with `Σ_ij = rho^|i−j|`.
    Gaussian { p: usize, n: usize, rho: f64 },
    /// `U V / √rank` with standard normal factors, plus white noise.
    LowRank {
        p: usize,
        n: usize,
        rank: usize,
        #[serde(default)]
        noise: f64,
    },
    /// One AR(1) Student-t series started at its stationary mean.
    Ar1t { n: usize, mu: f64, a: f64, sigma: f64, nu: f64 },
    /// A complete table on disk; relative paths resolve against the config
    /// file's directory.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismSpec {
    Mcar { rate: f64 },
    Mar { driver_row: usize, phi0: f64, phi1: f64 },
    Mnar { phi0: f64, phi1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Mean,
    Knn { k: usize },
    /// Gaussian EM, then conditional means.
    ConditionalGaussian,
    Iterative {
        #[serde(default = "default_ridge")]
        ridge_penalty: f64,
        #[serde(default = "default_sweeps")]
        max_sweeps: usize,
    },
    SoftImpute {
        lambda: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    HardImpute {
        rank: usize,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    /// Last observation carried forward along each row (backward for a
    /// leading gap).
    Locf,
    /// Linear interpolation along each row, constant past the ends.
    Linear,
    /// Per-row AR(1) Student-t SAEM fit, then the mean of posterior draws.
    Ar1t {
        #[serde(default = "default_saem_iters")]
        iters: usize,
        #[serde(default = "default_draws")]
        draws: usize,
    },
}

fn default_ridge() -> f64 {
    1e-3
}
fn default_sweeps() -> usize {
    100
}
fn default_max_iter() -> usize {
    500
}
fn default_saem_iters() -> usize {
    300
}
fn default_draws() -> usize {
    20
}

impl MethodSpec {
    pub fn label(&self) -> &'static str {
        match self {
            MethodSpec::Mean => "mean",
            MethodSpec::Knn { .. } => "knn",
            MethodSpec::ConditionalGaussian => "conditional_gaussian",
            MethodSpec::Iterative { .. } => "iterative",
            MethodSpec::SoftImpute { .. } => "soft_impute",
            MethodSpec::HardImpute { .. } => "hard_impute",
            MethodSpec::Locf => "locf",
            MethodSpec::Linear => "linear",
            MethodSpec::Ar1t { .. } => "ar1t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Root mean squared error over the missing entries.
    Rmse,
    /// Mean absolute error over the missing entries.
    Mae,
    /// `‖X̂ − X‖_F / ‖X‖_F` over all entries.
    RelativeError,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::RelativeError => "relative_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    pub replicates: usize,
    pub dataset: DatasetSpec,
    pub mechanism: MechanismSpec,
    pub method: MethodSpec,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Rmse]
}

/// What `bench` writes next to its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub gapkit_version: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            gapkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }
}

impl ExperimentConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.method.label().to_string())
    }

    /// Missing rates to run: the sweep, or the single configured rate
    /// (`None` for mechanisms without a rate).
    pub fn settings(&self) -> Vec<Option<f64>> {
        match (&self.sweep, self.mechanism) {
            (Some(s), _) => s.rates.iter().map(|&r| Some(r)).collect(),
            (None, MechanismSpec::Mcar { rate }) => vec![Some(rate)],
            (None, _) => vec![None],
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.replicates == 0 {
            return Err(config("replicates must be at least 1"));
        }
        if self.metrics.is_empty() {
            return Err(config("at least one metric is required"));
        }
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        match self.mechanism {
            MechanismSpec::Mcar { rate } if !rate_ok(rate) => return Err(config("mcar rate must lie in [0, 1]")),
            MechanismSpec::Mar { driver_row, .. } if driver_row >= self.dataset_rows()? => {
                return Err(config("mar driver_row is out of range"))
            }
            _ => {}
        }
        if let Some(s) = &self.sweep {
            if !matches!(self.mechanism, MechanismSpec::Mcar { .. }) {
                return Err(config("a rate sweep needs the mcar mechanism"));
            }
            if s.rates.is_empty() || !s.rates.iter().all(|&r| rate_ok(r)) {
                return Err(config("sweep rates must be a nonempty list in [0, 1]"));
            }
        }
        match &self.dataset {
            DatasetSpec::Gaussian { p, n, rho } => {
                if *p == 0 || *n == 0 || !(rho.abs() < 1.0) {
                    return Err(config("gaussian dataset needs p, n >= 1 and |rho| < 1"));
                }
            }
            DatasetSpec::LowRank { p, n, rank, noise } => {
                if *rank == 0 || *rank > (*p).min(*n) || !(*noise >= 0.0) {
                    return Err(config("low_rank dataset needs 1 <= rank <= min(p, n) and noise >= 0"));
                }
            }
            DatasetSpec::Ar1t { n, sigma, nu, .. } => {
                if *n < 2 || !(*sigma > 0.0) || !(*nu > 0.0) {
                    return Err(config("ar1t dataset needs n >= 2, sigma > 0 and nu > 0"));
                }
            }
            DatasetSpec::Csv { path } => {
                if !path.is_file() {
                    return Err(config(format!("dataset file {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    fn dataset_rows(&self) -> CliResult<usize> {
        Ok(match &self.dataset {
            DatasetSpec::Gaussian { p, .. } | DatasetSpec::LowRank { p, .. } => *p,
            DatasetSpec::Ar1t { .. } => 1,
            DatasetSpec::Csv { path } => crate::io::read_table(path)?.data.nrows(),
        })
    }

    /// Makes a relative CSV path absolute against `base`.
    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSpec::Csv { path } = &mut self.dataset {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

/// Parses a config or manifest from text. `json` selects the syntax.
pub fn parse_config(text: &str, json: bool) -> CliResult<ExperimentConfig> {
    if json {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| config(e.to_string()))?;
        if value.get("gapkit_version").is_some() {
            let m: Manifest = serde_json::from_value(value).map_err(|e| config(e.to_string()))?;
            return Ok(m.config);
        }
        serde_json::from_value(value).map_err(|e| config(e.to_string()))
    } else {
        let value: toml::Value = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        if value.get("gapkit_version").is_some() {
            let m: Manifest = value.try_into().map_err(|e: toml::de::Error| config(e.to_string()))?;
            return Ok(m.config);
        }
        value.try_into().map_err(|e: toml::de::Error| config(e.to_string()))
    }
}

/// Loads, resolves and validates a config file.
pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut cfg = parse_config(&text, json).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
    let base = base.canonicalize().map_err(|e| CliError::io(base, e))?;
    cfg.resolve_paths(&base);
    cfg.validate()?;
    Ok(cfg)
}
