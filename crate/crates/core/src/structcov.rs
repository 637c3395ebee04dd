//! Structured covariance estimation: projections onto the factor-model set
//! `{σ²I + USUᵀ}` and the noise-floored set `{Σ : Σ ⪰ σ_known² I}`, and EM
//! with the projection applied after every M-step.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::data::IncompleteMatrix;
use crate::em::gaussian::run_gaussian_em;
use crate::em::{naive_init, EmConfig, EmFit, GaussianParams};
use crate::error::{invalid, Result};
use crate::linalg::{floor_spectrum, reconstruct, sym_eigen_desc};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovStructure {
    /// White noise plus a rank-`r` positive semidefinite component.
    FactorModel { rank: usize },
    /// Every eigenvalue at least `sigma_known²`.
    NoiseFloor { sigma_known: f64 },
}

impl CovStructure {
    pub fn validate(&self, p: usize) -> Result<()> {
        match *self {
            Self::FactorModel { rank } if rank == 0 || rank >= p => {
                Err(invalid("factor rank must satisfy 1 <= r < p"))
            }
            Self::NoiseFloor { sigma_known } if !(sigma_known > 0.0) => {
                Err(invalid("noise floor must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn project(&self, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match *self {
            Self::FactorModel { rank } => project_factor_model(sigma, rank),
            Self::NoiseFloor { sigma_known } => Ok(project_fml(sigma, sigma_known)),
        }
    }
}

/// Factor-model projection. With eigenvalues `λ_1 ≥ … ≥ λ_p`, the noise
/// level is the mean of the `p − r` smallest and the output is
/// `σ̂² I + Σ_{i≤r} max(λ_i − σ̂², 0) u_i u_iᵀ`.
pub fn project_factor_model(sigma: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    CovStructure::FactorModel { rank }.validate(p)?;
    let (values, vectors) = sym_eigen_desc(sigma);
    let noise = values.rows(rank, p - rank).sum() / (p - rank) as f64;
    let spectrum = values.map_with_location(|i, _, v| if i < rank { noise + (v - noise).max(0.0) } else { noise });
    Ok(reconstruct(&spectrum, &vectors))
}

/// Floors every eigenvalue at `sigma_known²`.
pub fn project_fml(sigma: &DMatrix<f64>, sigma_known: f64) -> DMatrix<f64> {
    floor_spectrum(sigma, sigma_known * sigma_known)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredFit {
    pub fit: EmFit<GaussianParams>,
    /// Surrogate `Q(θ_{k+1} | θ_k)` after each iteration.
    pub q_trace: Vec<f64>,
}

/// Gaussian EM whose covariance update is projected onto the structure set;
/// the mean update is unconstrained. Starts from the projected
/// mean-imputed moments.
///
/// The noise-floor projection is the exact constrained maximizer of the
/// surrogate, so the observed log-likelihood trace is nondecreasing there.
/// The factor-model projection is not, and its trace carries no such
/// guarantee.
pub fn em_structured_fit(x: &IncompleteMatrix, structure: CovStructure, cfg: &EmConfig) -> Result<StructuredFit> {
    structure.validate(x.nrows())?;
    let mut init = naive_init(x)?;
    init.sigma = structure.project(&init.sigma)?;
    let (fit, q_trace) = run_gaussian_em(x, &init, cfg, &|s| structure.project(s))?;
    Ok(StructuredFit { fit, q_trace })
}
