use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{check_rows_observed, m_step, EStep, EmConfig, EmFit, SuffStats};
use crate::data::{ColumnSplit, IncompleteMatrix};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, log_det_spd, psd_sqrt_factor, submatrix, subvector, symmetrize};
use crate::rng::GapRng;

/// Mean vector and covariance matrix of a multivariate Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let params = Self { mu, sigma };
        params.validate()?;
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Checks shape, symmetry (1e-12 relative) and positive definiteness.
    pub fn validate(&self) -> Result<()> {
        let p = self.mu.len();
        if self.sigma.shape() != (p, p) {
            return Err(Error::Shape {
                expected: (p, p),
                found: self.sigma.shape(),
            });
        }
        let asym = (&self.sigma - self.sigma.transpose()).amax();
        if asym > 1e-12 * self.sigma.amax().max(f64::MIN_POSITIVE) {
            return Err(invalid("covariance must be symmetric"));
        }
        if cholesky(&self.sigma).is_none() {
            return Err(Error::NotPositiveDefinite("covariance"));
        }
        Ok(())
    }
}

/// Conditional law of the missing block given the observed block:
/// `μ_{m|o} = μ_m + Σ_{m,o} Σ_{o,o}⁻¹ (x_o − μ_o)` and
/// `Σ_{m|o} = Σ_{m,m} − Σ_{m,o} Σ_{o,o}⁻¹ Σ_{o,m}`.
pub fn conditional_gaussian(params: &GaussianParams, split: &ColumnSplit) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = &split.missing_idx;
    let o = &split.observed_idx;
    if split.dim() != params.dim() {
        return Err(Error::Shape {
            expected: (params.dim(), 1),
            found: (split.dim(), 1),
        });
    }
    let mu_m = subvector(&params.mu, m);
    let s_mm = submatrix(&params.sigma, m, m);
    if m.is_empty() || o.is_empty() {
        return Ok((mu_m, s_mm));
    }
    let s_oo = submatrix(&params.sigma, o, o);
    let s_mo = submatrix(&params.sigma, m, o);
    let chol = cholesky(&s_oo).ok_or(Error::Singular("observed-block covariance"))?;
    let resid = &split.x_o - subvector(&params.mu, o);
    let mean = mu_m + &s_mo * chol.solve(&resid);
    let cov = symmetrize(&(s_mm - &s_mo * chol.solve(&s_mo.transpose())));
    Ok((mean, cov))
}

/// Observed-data log-likelihood: per column, the log-density of the
/// observed block under its Gaussian marginal. Fully missing columns add 0.
pub fn observed_loglik_gaussian(params: &GaussianParams, x: &IncompleteMatrix) -> Result<f64> {
    if x.nrows() != params.dim() {
        return Err(Error::Shape {
            expected: (params.dim(), x.ncols()),
            found: x.shape(),
        });
    }
    let mut total = 0.0;
    for j in 0..x.ncols() {
        let split = x.split_column(j)?;
        total += column_loglik(params, &split)?;
    }
    Ok(total)
}

fn column_loglik(params: &GaussianParams, split: &ColumnSplit) -> Result<f64> {
    let o = &split.observed_idx;
    if o.is_empty() {
        return Ok(0.0);
    }
    let s_oo = submatrix(&params.sigma, o, o);
    let chol = cholesky(&s_oo).ok_or(Error::Singular("observed-block covariance"))?;
    let resid = &split.x_o - subvector(&params.mu, o);
    let maha = resid.dot(&chol.solve(&resid));
    let logdet = log_det_spd(&s_oo).ok_or(Error::Singular("observed-block covariance"))?;
    Ok(-0.5 * (o.len() as f64 * (2.0 * PI).ln() + logdet + maha))
}

/// Sample mean and biased (1/n) sample covariance of a complete matrix.
pub fn complete_data_mle(x: &DMatrix<f64>) -> GaussianParams {
    let n = x.ncols() as f64;
    let mu = x.column_mean();
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mu[i]);
    let sigma = symmetrize(&(&centered * centered.transpose() / n));
    GaussianParams { mu, sigma }
}

/// Expected sufficient statistics of one column, or a draw of them.
pub(crate) struct ColumnMoments {
    pub xhat: DVector<f64>,
    /// Conditional covariance of the missing block, with its indices.
    pub cond_cov: DMatrix<f64>,
    pub missing: Vec<usize>,
}

pub(crate) fn column_moments(params: &GaussianParams, split: &ColumnSplit) -> Result<ColumnMoments> {
    let (mean_m, cov_m) = conditional_gaussian(params, split)?;
    let mut xhat = DVector::zeros(params.dim());
    for (k, &i) in split.observed_idx.iter().enumerate() {
        xhat[i] = split.x_o[k];
    }
    for (k, &i) in split.missing_idx.iter().enumerate() {
        xhat[i] = mean_m[k];
    }
    Ok(ColumnMoments {
        xhat,
        cond_cov: cov_m,
        missing: split.missing_idx.clone(),
    })
}

/// Adds `weight * x xᵀ` plus `extra` on the missing block.
pub(crate) fn accumulate(stats: &mut SuffStats, x: &DVector<f64>, weight: f64, missing: &[usize], extra: Option<&DMatrix<f64>>) {
    stats.w += weight;
    stats.wx.axpy(weight, x, 1.0);
    stats.wxx.ger(weight, x, x, 1.0);
    if let Some(extra) = extra {
        for (a, &ia) in missing.iter().enumerate() {
            for (b, &ib) in missing.iter().enumerate() {
                stats.wxx[(ia, ib)] += extra[(a, b)];
            }
        }
    }
}

/// `mean + scale * L z` with `L` a square-root factor of `cov`.
pub(crate) fn draw_block(mean: &DVector<f64>, cov: &DMatrix<f64>, scale: f64, rng: &mut GapRng) -> DVector<f64> {
    if mean.is_empty() {
        return mean.clone();
    }
    let l = psd_sqrt_factor(cov);
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + l * z * scale
}

/// E-step statistics for the Gaussian model under the chosen variant.
/// Returns the statistics for the current iteration (before SAEM blending).
pub(crate) fn gaussian_stats(
    x: &IncompleteMatrix,
    splits: &[ColumnSplit],
    params: &GaussianParams,
    e_step: EStep,
    rng: &mut GapRng,
) -> Result<SuffStats> {
    let p = x.nrows();
    let mut stats = SuffStats::zeros(p, x.ncols());
    let draws = match e_step {
        EStep::Exact => 0,
        EStep::Sem | EStep::Saem(_) => 1,
        EStep::Mcem { draws } => draws,
    };
    for split in splits {
        let mom = column_moments(params, split)?;
        if draws == 0 || mom.missing.is_empty() {
            let extra = (!mom.missing.is_empty()).then_some(&mom.cond_cov);
            accumulate(&mut stats, &mom.xhat, 1.0, &mom.missing, extra);
            continue;
        }
        let mean_m = subvector(&mom.xhat, &mom.missing);
        let inv = 1.0 / draws as f64;
        for _ in 0..draws {
            let drawn = draw_block(&mean_m, &mom.cond_cov, 1.0, rng);
            let mut full = mom.xhat.clone();
            for (k, &i) in mom.missing.iter().enumerate() {
                full[i] = drawn[k];
            }
            accumulate(&mut stats, &full, inv, &[], None);
        }
    }
    Ok(stats)
}

/// Expected complete-data log-likelihood `Q(μ, Σ)` from sufficient
/// statistics.
pub(crate) fn q_value(stats: &SuffStats, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let p = mu.len() as f64;
    let scatter = &stats.wxx - &stats.wx * mu.transpose() - mu * stats.wx.transpose() + mu * mu.transpose() * stats.w;
    let chol = cholesky(sigma).ok_or(Error::NotPositiveDefinite("covariance"))?;
    let tr = chol.solve(&scatter).trace();
    let logdet = log_det_spd(sigma).ok_or(Error::NotPositiveDefinite("covariance"))?;
    Ok(-0.5 * stats.n * (p * (2.0 * PI).ln() + logdet) - 0.5 * tr)
}

/// EM loop with an optional covariance projection applied after each
/// M-step. Returns the fit and the per-iteration surrogate values
/// `Q(θ_{k+1} | θ_k)`.
pub(crate) fn run_gaussian_em(
    x: &IncompleteMatrix,
    init: &GaussianParams,
    cfg: &EmConfig,
    project: &dyn Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
) -> Result<(EmFit<GaussianParams>, Vec<f64>)> {
    cfg.validate()?;
    check_rows_observed(x, 2)?;
    init.validate()?;
    if init.dim() != x.nrows() {
        return Err(Error::Shape {
            expected: (x.nrows(), x.nrows()),
            found: init.sigma.shape(),
        });
    }
    let splits: Vec<ColumnSplit> = (0..x.ncols()).map(|j| x.split_column(j)).collect::<Result<_>>()?;
    let mut rng = cfg.seed.rng();
    let mut params = init.clone();
    let mut ll = observed_loglik_gaussian(&params, x)?;
    let mut trace = alloc::vec![ll];
    let mut q_trace = Vec::new();
    let mut running: Option<SuffStats> = None;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iter {
        iterations = k;
        let fresh = gaussian_stats(x, &splits, &params, cfg.e_step, &mut rng)?;
        let stats = match cfg.e_step {
            EStep::Saem(schedule) => {
                let s = running.get_or_insert_with(|| fresh.clone());
                s.blend(&fresh, schedule.gamma(k));
                s.clone()
            }
            _ => fresh,
        };
        let (mu, sigma) = m_step(&stats, &params.sigma, cfg.m_step)?;
        let sigma = project(&sigma)?;
        q_trace.push(q_value(&stats, &mu, &sigma)?);
        params = GaussianParams { mu, sigma };
        let ll_new = observed_loglik_gaussian(&params, x)?;
        trace.push(ll_new);
        let delta = (ll_new - ll).abs();
        ll = ll_new;
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok((
        EmFit {
            params,
            trace,
            iterations,
            converged,
        },
        q_trace,
    ))
}

/// Gaussian EM on incomplete data.
///
/// The exact E-step accumulates `E[x]` and `E[x xᵀ]` per column from the
/// conditional moments (the second moment gains `Σ_{m|o}` on the missing
/// block); the stochastic variants replace them by posterior draws. Stops
/// when the observed log-likelihood changes by less than `cfg.tol`;
/// `converged` is false if `cfg.max_iter` is reached first.
pub fn em_gaussian_fit(x: &IncompleteMatrix, init: &GaussianParams, cfg: &EmConfig) -> Result<EmFit<GaussianParams>> {
    run_gaussian_em(x, init, cfg, &|s| Ok(s.clone())).map(|(fit, _)| fit)
}
