//! EM-family estimation of Gaussian and Student-t parameters from
//! incomplete data.
//!
//! The E-step variant ([`EStep`]) and M-step variant ([`MStep`]) are chosen
//! independently through [`EmConfig`]. Columns of the data matrix are the
//! samples; rows are the variables.

mod density;
pub(crate) mod gaussian;
mod map;
mod student;

pub use density::DensityGenerator;
pub use gaussian::{
    complete_data_mle, conditional_gaussian, em_gaussian_fit, observed_loglik_gaussian, GaussianParams,
};
pub use map::{map_m_step, MapStep};
pub use student::{em_student_fit, observed_loglik_student, StudentTParams};

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::data::IncompleteMatrix;
use crate::error::{invalid, Error, Result};
use crate::linalg::{chol_solve_mat, safeguard_spd};
use crate::rng::SeedSpec;

/// Step-size sequence for SAEM: `γ_k = 1` during the first `burn_in`
/// iterations, then `γ_k = (k − burn_in + 1)^(−exponent)`.
///
/// `exponent` in `(1/2, 1]` keeps `Σγ = ∞` and `Σγ² < ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaemSchedule {
    pub burn_in: usize,
    pub exponent: f64,
}

impl Default for SaemSchedule {
    fn default() -> Self {
        Self {
            burn_in: 20,
            exponent: 1.0,
        }
    }
}

impl SaemSchedule {
    /// Step size at iteration `k` (1-based).
    pub fn gamma(&self, k: usize) -> f64 {
        if k <= self.burn_in {
            1.0
        } else {
            ((k - self.burn_in + 1) as f64).powf(-self.exponent)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return Err(invalid("SAEM exponent must lie in (1/2, 1]"));
        }
        Ok(())
    }
}

/// How the conditional expectation of the complete-data log-likelihood is
/// formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EStep {
    /// Closed-form conditional moments.
    Exact,
    /// One posterior draw of the missing block per iteration.
    Sem,
    /// Average over `draws` posterior draws.
    Mcem { draws: usize },
    /// One draw, blended into running sufficient statistics.
    Saem(SaemSchedule),
}

/// How the surrogate is maximized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MStep {
    /// Joint maximization.
    Full,
    /// Location given scatter, then scatter given location.
    Ecm,
    /// As ECM, with the degrees of freedom (when estimated) updated by
    /// maximizing the observed-data likelihood directly.
    Ecme,
    /// Partial ascent: the precision matrix moves a fraction
    /// `1 − 2^(−inner_steps)` of the way to its maximizer.
    Gem { inner_steps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub e_step: EStep,
    pub m_step: MStep,
    /// Stop when the observed log-likelihood changes by less than this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: SeedSpec,
    /// Estimate the Student-t degrees of freedom on a log-spaced grid.
    /// Ignored by the Gaussian fit.
    pub estimate_nu: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            e_step: EStep::Exact,
            m_step: MStep::Full,
            tol: 1e-8,
            max_iter: 500,
            seed: SeedSpec::default(),
            estimate_nu: false,
        }
    }
}

impl EmConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        match self.e_step {
            EStep::Mcem { draws } if draws == 0 => return Err(invalid("MCEM needs at least one draw")),
            EStep::Saem(s) => s.validate()?,
            _ => {}
        }
        Ok(())
    }
}

/// Result of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit<P> {
    pub params: P,
    /// Observed-data log-likelihood, starting with the value at `init`.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted sufficient statistics `Σ w`, `Σ w x`, `Σ w x xᵀ` (the Gaussian
/// case has unit weights).
#[derive(Debug, Clone)]
pub(crate) struct SuffStats {
    pub n: f64,
    pub w: f64,
    pub wx: DVector<f64>,
    pub wxx: DMatrix<f64>,
}

impl SuffStats {
    pub fn zeros(p: usize, n: usize) -> Self {
        Self {
            n: n as f64,
            w: 0.0,
            wx: DVector::zeros(p),
            wxx: DMatrix::zeros(p, p),
        }
    }

    /// `self ← self + γ (other − self)`.
    pub fn blend(&mut self, other: &SuffStats, gamma: f64) {
        self.w += gamma * (other.w - self.w);
        self.wx += (&other.wx - &self.wx) * gamma;
        self.wxx += (&other.wxx - &self.wxx) * gamma;
    }

    pub fn scale(&mut self, s: f64) {
        self.w *= s;
        self.wx *= s;
        self.wxx *= s;
    }

    pub fn add(&mut self, other: &SuffStats) {
        self.w += other.w;
        self.wx += &other.wx;
        self.wxx += &other.wxx;
    }

    /// Unconstrained maximizer of the surrogate: weighted mean and scatter.
    pub fn maximize(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mu = &self.wx / self.w;
        let sigma = (&self.wxx - &self.wx * mu.transpose() - &mu * self.wx.transpose()
            + &mu * mu.transpose() * self.w)
            / self.n;
        (mu, crate::linalg::symmetrize(&sigma))
    }
}

/// Applies the M-step variant to the sufficient statistics.
pub(crate) fn m_step(stats: &SuffStats, prev_sigma: &DMatrix<f64>, m: MStep) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mu, sigma_star) = stats.maximize();
    let sigma = match m {
        MStep::Full | MStep::Ecm | MStep::Ecme => sigma_star,
        MStep::Gem { inner_steps } => {
            let omega = 1.0 - 0.5f64.powi(inner_steps.min(60) as i32);
            let p = prev_sigma.nrows();
            let eye = DMatrix::identity(p, p);
            let k_prev = chol_solve_mat(prev_sigma, &eye).ok_or(Error::NotPositiveDefinite("previous covariance"))?;
            let k_star = chol_solve_mat(&safeguard_spd(&sigma_star), &eye)
                .ok_or(Error::NotPositiveDefinite("M-step covariance"))?;
            let k = &k_prev + (k_star - &k_prev) * omega;
            chol_solve_mat(&crate::linalg::symmetrize(&k), &eye).ok_or(Error::NotPositiveDefinite("GEM precision"))?
        }
    };
    let sigma = safeguard_spd(&sigma);
    if crate::linalg::cholesky(&sigma).is_none() {
        return Err(Error::NotPositiveDefinite("M-step covariance after safeguard"));
    }
    Ok((mu, sigma))
}

/// Precondition shared by the fitters: every row observed at least twice.
pub(crate) fn check_rows_observed(x: &IncompleteMatrix, min: usize) -> Result<()> {
    for i in 0..x.nrows() {
        if x.mask().row_observed_count(i) < min {
            return Err(Error::InsufficientData(alloc::format!(
                "row {i} has fewer than {min} observed entries"
            )));
        }
    }
    Ok(())
}

/// Mean-imputed sample moments, the default starting point.
pub fn naive_init(x: &IncompleteMatrix) -> Result<GaussianParams> {
    let means = x.row_means()?;
    let filled = x.pinned(&DMatrix::from_fn(x.nrows(), x.ncols(), |i, _| means[i]));
    let params = complete_data_mle(&filled);
    Ok(GaussianParams {
        mu: params.mu,
        sigma: safeguard_spd(&params.sigma),
    })
}
