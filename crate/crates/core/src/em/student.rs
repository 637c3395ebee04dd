use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};

use super::gaussian::{accumulate, column_moments, draw_block, GaussianParams};
use super::{check_rows_observed, m_step, EStep, EmConfig, EmFit, SuffStats};
use crate::data::{ColumnSplit, IncompleteMatrix};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, log_det_spd, submatrix, subvector};
use crate::rng::GapRng;
use crate::special::ln_gamma;

/// Location, shape matrix and degrees of freedom of a multivariate
/// Student-t law.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentTParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub nu: f64,
}

impl StudentTParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, nu: f64) -> Result<Self> {
        let params = Self { mu, sigma, nu };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(invalid("degrees of freedom must be positive"));
        }
        self.location_scale().validate()
    }

    fn location_scale(&self) -> GaussianParams {
        GaussianParams {
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
        }
    }
}

/// `(p_o, δ_o)` for one column: observed count and Mahalanobis distance.
fn observed_mahalanobis(params: &StudentTParams, split: &ColumnSplit) -> Result<(usize, f64, f64)> {
    let o = &split.observed_idx;
    if o.is_empty() {
        return Ok((0, 0.0, 0.0));
    }
    let s_oo = submatrix(&params.sigma, o, o);
    let chol = cholesky(&s_oo).ok_or(Error::Singular("observed-block covariance"))?;
    let resid = &split.x_o - subvector(&params.mu, o);
    let delta = resid.dot(&chol.solve(&resid));
    let logdet = log_det_spd(&s_oo).ok_or(Error::Singular("observed-block covariance"))?;
    Ok((o.len(), delta, logdet))
}

fn column_loglik_t(nu: f64, p_o: usize, delta: f64, logdet: f64) -> f64 {
    if p_o == 0 {
        return 0.0;
    }
    let d = p_o as f64;
    ln_gamma(0.5 * (nu + d)) - ln_gamma(0.5 * nu) - 0.5 * d * (nu * PI).ln() - 0.5 * logdet
        - 0.5 * (nu + d) * (delta / nu).ln_1p()
}

/// Observed-data Student-t log-likelihood: the observed block of each
/// column is Student-t with the same `ν`.
pub fn observed_loglik_student(params: &StudentTParams, x: &IncompleteMatrix) -> Result<f64> {
    if x.nrows() != params.mu.len() {
        return Err(Error::Shape {
            expected: (params.mu.len(), x.ncols()),
            found: x.shape(),
        });
    }
    let mut total = 0.0;
    for j in 0..x.ncols() {
        let (p_o, delta, logdet) = observed_mahalanobis(params, &x.split_column(j)?)?;
        total += column_loglik_t(params.nu, p_o, delta, logdet);
    }
    Ok(total)
}

/// Posterior mean of the texture given the observed block.
pub fn texture_weight(nu: f64, p_o: usize, delta: f64) -> f64 {
    (nu + p_o as f64) / (nu + delta)
}

fn student_stats(
    splits: &[ColumnSplit],
    params: &StudentTParams,
    e_step: EStep,
    rng: &mut GapRng,
) -> Result<SuffStats> {
    let p = params.mu.len();
    let mut stats = SuffStats::zeros(p, splits.len());
    let draws = match e_step {
        EStep::Exact => 0,
        EStep::Sem | EStep::Saem(_) => 1,
        EStep::Mcem { draws } => draws,
    };
    let gp = params.location_scale();
    for split in splits {
        let (p_o, delta, _) = observed_mahalanobis(params, split)?;
        let mom = column_moments(&gp, split)?;
        if draws == 0 {
            let w = texture_weight(params.nu, p_o, delta);
            let extra = (!mom.missing.is_empty()).then_some(&mom.cond_cov);
            accumulate(&mut stats, &mom.xhat, w, &mom.missing, extra);
            continue;
        }
        let shape = 0.5 * (params.nu + p_o as f64);
        let rate = 0.5 * (params.nu + delta);
        let gamma = Gamma::new(shape, 1.0 / rate).map_err(|_| invalid("texture posterior"))?;
        let mean_m = subvector(&mom.xhat, &mom.missing);
        let inv = 1.0 / draws as f64;
        for _ in 0..draws {
            let tau: f64 = gamma.sample(rng);
            let mut full = mom.xhat.clone();
            if !mom.missing.is_empty() {
                let drawn = draw_block(&mean_m, &mom.cond_cov, 1.0 / tau.sqrt(), rng);
                for (k, &i) in mom.missing.iter().enumerate() {
                    full[i] = drawn[k];
                }
            }
            let mut one = SuffStats::zeros(p, 0);
            accumulate(&mut one, &full, tau, &[], None);
            one.scale(inv);
            stats.add(&one);
        }
    }
    Ok(stats)
}

/// Log-spaced grid on `[1, 100]` used for the degrees of freedom.
pub(crate) fn nu_grid() -> Vec<f64> {
    let k = 50;
    (0..k).map(|i| 10f64.powf(2.0 * i as f64 / (k - 1) as f64)).collect()
}

fn best_nu(x: &IncompleteMatrix, mu: &DVector<f64>, sigma: &DMatrix<f64>, current: f64) -> Result<f64> {
    let mut best = (current, f64::NEG_INFINITY);
    let mut cands = nu_grid();
    cands.push(current);
    for nu in cands {
        let cand = StudentTParams {
            mu: mu.clone(),
            sigma: sigma.clone(),
            nu,
        };
        let ll = observed_loglik_student(&cand, x)?;
        if ll > best.1 {
            best = (nu, ll);
        }
    }
    Ok(best.0)
}

/// Student-t EM on incomplete data.
///
/// Each column gets the texture weight `E[τ | x_o] = (ν + p_o)/(ν + δ_o)`;
/// the M-step is the weighted mean and scatter update. With
/// `cfg.estimate_nu`, `ν` is then chosen to maximize the observed
/// log-likelihood over a log-spaced grid on `[1, 100]` (the current value is
/// always a candidate).
pub fn em_student_fit(x: &IncompleteMatrix, init: &StudentTParams, cfg: &EmConfig) -> Result<EmFit<StudentTParams>> {
    cfg.validate()?;
    check_rows_observed(x, 2)?;
    init.validate()?;
    if init.mu.len() != x.nrows() {
        return Err(Error::Shape {
            expected: (x.nrows(), x.nrows()),
            found: init.sigma.shape(),
        });
    }
    let splits: Vec<ColumnSplit> = (0..x.ncols()).map(|j| x.split_column(j)).collect::<Result<_>>()?;
    let mut rng = cfg.seed.rng();
    let mut params = init.clone();
    let mut ll = observed_loglik_student(&params, x)?;
    let mut trace = alloc::vec![ll];
    let mut running: Option<SuffStats> = None;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iter {
        iterations = k;
        let fresh = student_stats(&splits, &params, cfg.e_step, &mut rng)?;
        let stats = match cfg.e_step {
            EStep::Saem(schedule) => {
                let s = running.get_or_insert_with(|| fresh.clone());
                s.blend(&fresh, schedule.gamma(k));
                s.clone()
            }
            _ => fresh,
        };
        let (mu, sigma) = m_step(&stats, &params.sigma, cfg.m_step)?;
        let nu = if cfg.estimate_nu {
            best_nu(x, &mu, &sigma, params.nu)?
        } else {
            params.nu
        };
        params = StudentTParams { mu, sigma, nu };
        let ll_new = observed_loglik_student(&params, x)?;
        trace.push(ll_new);
        let delta = (ll_new - ll).abs();
        ll = ll_new;
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        params,
        trace,
        iterations,
        converged,
    })
}
