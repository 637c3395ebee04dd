//! Low-rank matrix completion: hard-impute (rank-`r` SVD truncation) and
//! soft-impute (singular-value soft-thresholding).

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::data::IncompleteMatrix;
use crate::error::{invalid, Error, Result};
use crate::imputation::impute_mean;
use crate::linalg::{nuclear_norm, SortedSvd};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionOptions {
    /// Stop when `‖X_{k+1} − X_k‖_F / ‖X_k‖_F` falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompletionMode {
    Hard { rank: usize },
    Soft { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    /// Observed entries from the input, missing entries from `low_rank`.
    pub completed: DMatrix<f64>,
    /// Final low-rank iterate.
    pub low_rank: DMatrix<f64>,
    /// Target rank (hard) or number of singular values above `λ` (soft).
    pub rank: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Objective `½‖M⊙(Z − Y)‖²_F + λ‖Z‖_*` per iterate, starting at the
    /// initial point. Empty for hard-impute.
    pub objective: Vec<f64>,
}

/// Runs the chosen completion method.
pub fn complete(y: &IncompleteMatrix, mode: CompletionMode, opts: CompletionOptions) -> Result<CompletionResult> {
    match mode {
        CompletionMode::Hard { rank } => hard_impute(y, rank, opts, None),
        CompletionMode::Soft { lambda } => soft_impute(y, lambda, opts, None),
    }
}

/// `½‖M⊙(X − Y)‖²_F + λ‖X‖_*`. Entries of `y` where the mask is zero are
/// not read.
pub fn nuclear_objective(x: &DMatrix<f64>, y: &IncompleteMatrix, lambda: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Shape {
            expected: y.shape(),
            found: x.shape(),
        });
    }
    let fit = fidelity(x, y);
    let reg = if lambda == 0.0 { 0.0 } else { lambda * nuclear_norm(x) };
    Ok(fit + reg)
}

fn fidelity(x: &DMatrix<f64>, y: &IncompleteMatrix) -> f64 {
    let mut s = 0.0;
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if y.is_observed(i, j) {
                let d = x[(i, j)] - y.value(i, j);
                s += d * d;
            }
        }
    }
    0.5 * s
}

fn check_opts(opts: &CompletionOptions) -> Result<()> {
    if !(opts.tol > 0.0) {
        return Err(invalid("tol must be positive"));
    }
    Ok(())
}

fn start(y: &IncompleteMatrix, init: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    match init {
        Some(z) if z.shape() != y.shape() => Err(Error::Shape {
            expected: y.shape(),
            found: z.shape(),
        }),
        Some(z) => Ok(y.pinned(z)),
        None => impute_mean(y),
    }
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let diff = (new - old).norm();
    let base = old.norm();
    if base > 0.0 {
        diff / base
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Hard-impute: alternate a rank-`r` truncated SVD of the current completion
/// with re-pinning the observed entries. Starts from `init` (pinned) or the
/// row-mean completion.
pub fn hard_impute(
    y: &IncompleteMatrix,
    rank: usize,
    opts: CompletionOptions,
    init: Option<&DMatrix<f64>>,
) -> Result<CompletionResult> {
    check_opts(&opts)?;
    let (p, n) = y.shape();
    if rank == 0 || rank > p.min(n) {
        return Err(invalid("rank must lie in 1..=min(p, n)"));
    }
    let mut x = start(y, init)?;
    let mut low_rank = x.clone();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=opts.max_iter {
        iterations = k;
        low_rank = SortedSvd::new(&x).compose(rank, |s| s);
        let next = y.pinned(&low_rank);
        let change = relative_change(&next, &x);
        x = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(CompletionResult {
        completed: x,
        low_rank,
        rank,
        iterations,
        converged,
        objective: Vec::new(),
    })
}

/// Soft-impute: `Z ← S_λ(P_Ω(Y) + P_Ω⊥(Z))` where `S_λ` soft-thresholds the
/// singular values by `λ`. Each step is a majorize-minimize step on the
/// nuclear-norm objective, which is recorded per iterate.
pub fn soft_impute(
    y: &IncompleteMatrix,
    lambda: f64,
    opts: CompletionOptions,
    init: Option<&DMatrix<f64>>,
) -> Result<CompletionResult> {
    check_opts(&opts)?;
    if !(lambda >= 0.0) {
        return Err(invalid("lambda must be nonnegative"));
    }
    let mut z = start(y, init)?;
    let mut objective = alloc::vec![nuclear_objective(&z, y, lambda)?];
    let mut rank = 0;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=opts.max_iter {
        iterations = k;
        let svd = SortedSvd::new(&y.pinned(&z));
        rank = svd.s.iter().filter(|&&s| s > lambda).count();
        let next = svd.compose(rank, |s| s - lambda);
        objective.push(nuclear_objective(&next, y, lambda)?);
        let change = relative_change(&next, &z);
        z = next;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(CompletionResult {
        completed: y.pinned(&z),
        low_rank: z,
        rank,
        iterations,
        converged,
        objective,
    })
}
