//! Streaming subspace tracking from incomplete observations.
//!
//! [`petrels_update`] runs one step of the per-row recursive-least-squares
//! tracker: project the new sample onto the current subspace using its
//! observed rows, then update every observed row of `U` with its own RLS
//! recursion. [`robust_update`] first separates sparse outliers and drops
//! the flagged entries from the update.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{lstsq_min_norm, orthonormalize, sym_eigen_desc};
use crate::rng::SeedSpec;

/// Initial RLS inverse-correlation scale.
pub const PRECISION_INIT: f64 = 1e3;
const CONDITION_LIMIT: f64 = 1e12;
/// Outlier entries with `|s| ≤` this count as clean.
pub const OUTLIER_ZERO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    /// `p x r` subspace estimate (not kept orthonormal).
    pub u: DMatrix<f64>,
    /// Per-row RLS inverse-correlation matrices, each `r x r`.
    pub precisions: Vec<DMatrix<f64>>,
    /// Forgetting factor in `(0, 1]`.
    pub forget: f64,
    /// Samples processed.
    pub t: usize,
    /// Row precisions reset by the conditioning guard.
    pub resets: usize,
}

impl TrackerState {
    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }
}

/// Random orthonormal `p x r` start with precisions `10³ I`.
pub fn petrels_init(p: usize, r: usize, forget: f64, seed: SeedSpec) -> Result<TrackerState> {
    if r == 0 || r > p {
        return Err(invalid("rank must lie in 1..=p"));
    }
    if !(forget > 0.0 && forget <= 1.0) {
        return Err(invalid("forgetting factor must lie in (0, 1]"));
    }
    let mut rng = seed.rng();
    // a Gaussian matrix has full column rank almost surely; redraw otherwise
    let u = loop {
        let g = DMatrix::<f64>::from_fn(p, r, |_, _| StandardNormal.sample(&mut rng));
        if let Ok(q) = orthonormalize(&g) {
            break q;
        }
    };
    Ok(TrackerState {
        u,
        precisions: (0..p).map(|_| DMatrix::identity(r, r) * PRECISION_INIT).collect(),
        forget,
        t: 0,
        resets: 0,
    })
}

fn check_sample(state_p: usize, y: &DVector<f64>, mask: &[bool]) -> Result<()> {
    if y.len() != state_p || mask.len() != state_p {
        return Err(Error::Shape {
            expected: (state_p, 1),
            found: (y.len(), mask.len()),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w: DVector<f64>,
    /// Fewer observed entries than the rank: `w` is the minimum-norm
    /// solution.
    pub underdetermined: bool,
}

/// `argmin_w ‖m ⊙ (y − U w)‖²` over the observed rows (minimum-norm when
/// the restricted system is rank deficient).
pub fn petrels_weights(u: &DMatrix<f64>, y: &DVector<f64>, mask: &[bool]) -> Result<Weights> {
    check_sample(u.nrows(), y, mask)?;
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let r = u.ncols();
    let a = DMatrix::from_fn(rows.len(), r, |k, c| u[(rows[k], c)]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
    Ok(Weights {
        w: lstsq_min_norm(&a, &b, 1e-12),
        underdetermined: rows.len() < r,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub w: DVector<f64>,
    pub underdetermined: bool,
    /// `‖m ⊙ (y − U_{t−1} w)‖₂` before the update.
    pub residual: f64,
}

fn residual_norm(u: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, mask: &[bool]) -> f64 {
    let fit = u * w;
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (y[i] - fit[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Weighted RLS update of the rows where `mask` is set:
/// `k = β P w / (λ + β wᵀ P w)`, `u_i ← u_i + (y_i − u_iᵀ w) k`,
/// `P ← (P − k wᵀ P) / λ`.
fn rls_rows(state: &mut TrackerState, y: &DVector<f64>, mask: &[bool], w: &DVector<f64>, beta: f64) {
    let lam = state.forget;
    for i in 0..state.dim() {
        if !mask[i] {
            continue;
        }
        let pw = &state.precisions[i] * w;
        let denom = lam + beta * w.dot(&pw);
        let gain = &pw * (beta / denom);
        let err = y[i] - state.u.row(i).transpose().dot(w);
        for c in 0..state.rank() {
            state.u[(i, c)] += err * gain[c];
        }
        let mut next = (&state.precisions[i] - &gain * pw.transpose()) / lam;
        next = (&next + next.transpose()) * 0.5;
        if !well_conditioned(&next) {
            next = DMatrix::identity(state.rank(), state.rank()) * PRECISION_INIT;
            state.resets += 1;
        }
        state.precisions[i] = next;
    }
}

fn well_conditioned(p: &DMatrix<f64>) -> bool {
    if p.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let (vals, _) = sym_eigen_desc(p);
    let lo = vals[vals.len() - 1];
    lo > 0.0 && vals[0] / lo <= CONDITION_LIMIT
}

/// One PETRELS step. Rows of `U` not observed in this sample are left
/// untouched.
pub fn petrels_update(state: &mut TrackerState, y: &DVector<f64>, mask: &[bool]) -> Result<StepInfo> {
    let weights = petrels_weights(&state.u, y, mask)?;
    let residual = residual_norm(&state.u, y, &weights.w, mask);
    rls_rows(state, y, mask, &weights.w, 1.0);
    state.t += 1;
    Ok(StepInfo {
        w: weights.w,
        underdetermined: weights.underdetermined,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustConfig {
    /// `ℓ₁` weight on the outlier vector.
    pub rho: f64,
    pub admm_iters: usize,
    /// Stop when the outlier vector moves less than this (absolute plus
    /// relative).
    pub admm_tol: f64,
    /// Weight of the `‖U‖²_{2,∞}` penalty.
    pub alpha: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            admm_iters: 50,
            admm_tol: 1e-6,
            alpha: 0.0,
        }
    }
}

impl RobustConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(invalid("rho must be positive"));
        }
        if !(self.alpha >= 0.0) {
            return Err(invalid("alpha must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1 {
    pub w: DVector<f64>,
    /// Outlier estimate, zero on unobserved rows.
    pub s: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub underdetermined: bool,
    /// `‖m ⊙ (U w + s − y)‖² + ρ‖s‖₁` after each iteration.
    pub objective: Vec<f64>,
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Outlier and weight estimation:
/// `argmin_{w,s} ‖m ⊙ (U w + s − y)‖² + ρ‖s‖₁`
/// by exact alternating minimization. The `w`-step is least squares on
/// `y − s`; the `s`-step soft-thresholds the observed residual at `ρ/2`.
/// Each step minimizes the objective over its block, so the objective never
/// increases.
pub fn robust_stage1(u: &DMatrix<f64>, y: &DVector<f64>, mask: &[bool], cfg: &RobustConfig) -> Result<Stage1> {
    cfg.validate()?;
    check_sample(u.nrows(), y, mask)?;
    let p = u.nrows();
    let mut s = DVector::zeros(p);
    let mut w = DVector::zeros(u.ncols());
    let mut underdetermined = false;
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let clean = |s: &DVector<f64>| DVector::from_fn(p, |i, _| if mask[i] { y[i] - s[i] } else { 0.0 });
    for k in 1..=cfg.admm_iters.max(1) {
        iterations = k;
        let wts = petrels_weights(u, &clean(&s), mask)?;
        w = wts.w;
        underdetermined = wts.underdetermined;
        let fit = u * &w;
        let next = DVector::from_fn(p, |i, _| if mask[i] { soft(y[i] - fit[i], 0.5 * cfg.rho) } else { 0.0 });
        let moved = (&next - &s).amax();
        s = next;
        let obj = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (fit[i] + s[i] - y[i]).powi(2) + cfg.rho * s[i].abs())
            .sum::<f64>();
        objective.push(obj);
        if moved <= cfg.admm_tol * (1.0 + s.amax()) {
            converged = true;
            break;
        }
    }
    Ok(Stage1 {
        w,
        s,
        iterations,
        converged,
        underdetermined,
        objective,
    })
}

/// Proximal map of `(γ/2) max_i ‖u_i‖²`: rows longer than `c` are scaled to
/// norm `c`, where `γ c = Σ_i (‖u_i‖ − c)₊`.
pub fn clip_rows(u: &mut DMatrix<f64>, gamma: f64) -> Option<f64> {
    if gamma <= 0.0 {
        return None;
    }
    let mut norms: Vec<f64> = (0..u.nrows()).map(|i| u.row(i).norm()).collect();
    let original = norms.clone();
    norms.sort_by(|a, b| b.total_cmp(a));
    // c lies between consecutive sorted norms; with the k largest above c,
    // c = (Σ_{top k} ‖u‖) / (γ + k)
    let mut c = 0.0;
    let mut top = 0.0;
    for (k, &nk) in norms.iter().enumerate() {
        top += nk;
        let cand = top / (gamma + (k + 1) as f64);
        let next = norms.get(k + 1).copied().unwrap_or(0.0);
        if cand >= next && cand <= nk {
            c = cand;
            break;
        }
    }
    for (i, &ni) in original.iter().enumerate() {
        if ni > c && ni > 0.0 {
            let scale = c / ni;
            for v in u.row_mut(i).iter_mut() {
                *v *= scale;
            }
        }
    }
    Some(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustStepInfo {
    pub stage1: Stage1,
    /// Observed entries kept after outlier removal.
    pub clean_mask: Vec<bool>,
    /// Row-norm bound applied by the `L_{2,∞}` step, if any.
    pub clip: Option<f64>,
}

/// One robust step: outlier separation, then RLS row updates on the cleaned
/// mask with per-sample weight `(clean count)/p`, then the `L_{2,∞}` row
/// clipping with weight `α/t`.
pub fn robust_update(state: &mut TrackerState, y: &DVector<f64>, mask: &[bool], cfg: &RobustConfig) -> Result<RobustStepInfo> {
    let stage1 = robust_stage1(&state.u, y, mask, cfg)?;
    let clean_mask: Vec<bool> = (0..mask.len()).map(|i| mask[i] && stage1.s[i].abs() <= OUTLIER_ZERO).collect();
    let beta = clean_mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
    let w = match petrels_weights(&state.u, y, &clean_mask) {
        Ok(wt) if !wt.underdetermined => wt.w,
        _ => stage1.w.clone(),
    };
    if beta > 0.0 {
        rls_rows(state, y, &clean_mask, &w, beta);
    }
    state.t += 1;
    let clip = clip_rows(&mut state.u, cfg.alpha / state.t as f64);
    Ok(RobustStepInfo {
        stage1,
        clean_mask,
        clip,
    })
}
