//! Graph signals: recovery of missing node values under smoothness priors,
//! and learning of undirected (GMRF Laplacian) and directed (VAR) graphs.

mod learning;
mod recovery;
mod stsrgl;

pub use learning::{gmrf_learn, gmrf_objective, var_learn, GmrfFit, GmrfOptions, VarOptions};
pub use recovery::{
    huber_fidelity, recover, recover_tikhonov, recover_tv, Fidelity, RecoveryConfig, Regularizer, TvResult,
};
pub use stsrgl::{stsrgl_fit, stsrgl_objective, StsrglConfig, StsrglFit};

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Simple undirected graph with nonnegative edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedGraph {
    w: DMatrix<f64>,
}

impl UndirectedGraph {
    /// Validates a symmetric, hollow, nonnegative adjacency matrix.
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let p = w.nrows();
        if w.ncols() != p {
            return Err(Error::Shape {
                expected: (p, p),
                found: w.shape(),
            });
        }
        let scale = w.amax().max(1.0);
        for i in 0..p {
            if w[(i, i)] != 0.0 {
                return Err(invalid("adjacency must have a zero diagonal"));
            }
            for j in 0..p {
                let v = w[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(invalid("edge weights must be finite and nonnegative"));
                }
                if (v - w[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(invalid("adjacency must be symmetric"));
                }
            }
        }
        let w = (&w + w.transpose()) * 0.5;
        Ok(Self { w })
    }

    pub fn empty(p: usize) -> Self {
        Self { w: DMatrix::zeros(p, p) }
    }

    /// Builds from `(i, j, weight)` triples; repeated pairs overwrite.
    pub fn from_edges(p: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut w = DMatrix::zeros(p, p);
        for &(i, j, v) in edges {
            if i >= p || j >= p {
                return Err(Error::IndexOutOfRange { index: i.max(j), len: p });
            }
            if i == j {
                return Err(invalid("self-loops are not allowed"));
            }
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        Self::new(w)
    }

    /// Unit-weight 4-neighbour grid; node `(r, c)` has index `r * cols + c`.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let p = rows * cols;
        let mut w = DMatrix::zeros(p, p);
        for r in 0..rows {
            for c in 0..cols {
                let k = r * cols + c;
                if c + 1 < cols {
                    w[(k, k + 1)] = 1.0;
                    w[(k + 1, k)] = 1.0;
                }
                if r + 1 < rows {
                    w[(k, k + cols)] = 1.0;
                    w[(k + cols, k)] = 1.0;
                }
            }
        }
        Self { w }
    }

    /// Reads the weights off a Laplacian (`W = −offdiag(L)`, clipped at 0).
    pub fn from_laplacian(l: &DMatrix<f64>) -> Result<Self> {
        let p = l.nrows();
        let w = DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { (-0.5 * (l[(i, j)] + l[(j, i)])).max(0.0) });
        Self::new(w)
    }

    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `L = Diag(W 1) − W`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian_of(&self.w)
    }

    /// Edges `i < j` with weight above `threshold`.
    pub fn edges(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        let p = self.p();
        let mut out = Vec::new();
        for i in 0..p {
            for j in i + 1..p {
                if self.w[(i, j)] > threshold {
                    out.push((i, j, self.w[(i, j)]));
                }
            }
        }
        out
    }

    /// Connected-component label of each node (edges with positive weight).
    pub fn components(&self) -> Vec<usize> {
        let p = self.p();
        let mut label = alloc::vec![usize::MAX; p];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..p {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            stack.push(s);
            while let Some(i) = stack.pop() {
                for j in 0..p {
                    if self.w[(i, j)] > 0.0 && label[j] == usize::MAX {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

pub(crate) fn laplacian_of(w: &DMatrix<f64>) -> DMatrix<f64> {
    let p = w.nrows();
    let mut l = -w.clone();
    for i in 0..p {
        l[(i, i)] = w.row(i).sum() - w[(i, i)];
    }
    l
}

/// Directed graph given by a real adjacency matrix (temporal dependencies:
/// `A[(i, j)]` is the influence of node `j` at `t − 1` on node `i` at `t`).
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    pub a: DMatrix<f64>,
}

impl DirectedGraph {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape {
                expected: (a.nrows(), a.nrows()),
                found: a.shape(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(invalid("adjacency entries must be finite"));
        }
        Ok(Self { a })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothness {
    /// `tr(Xᵀ L X)`.
    Tikhonov,
    /// `½ Σ_ij W_ij ‖X_i − X_j‖₁` over rows.
    TotalVariation,
    /// `tr(Δ(X)ᵀ L Δ(X))`, `Δ(X) = [x₁, x₂ − x₁, …, x_n − x_{n−1}]`.
    SpatioTemporal,
    /// `Σ_t ‖x_t − W x_t / ‖W‖_F‖_p^p` for a directed adjacency `W`.
    DirectedVariation { p_norm: f64 },
}

/// Columns of `Δ(X)`.
pub(crate) fn temporal_difference(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = x.clone();
    for t in (1..x.ncols()).rev() {
        let diff = x.column(t) - x.column(t - 1);
        d.set_column(t, &diff);
    }
    d
}

/// `I − W/‖W‖_F`.
pub(crate) fn directed_operator(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let norm = w.norm();
    if !(norm > 0.0) {
        return Err(invalid("directed variation needs a nonzero adjacency"));
    }
    Ok(DMatrix::identity(w.nrows(), w.ncols()) - w / norm)
}

fn check_square(w: &DMatrix<f64>, p: usize) -> Result<()> {
    if w.shape() != (p, p) {
        return Err(Error::Shape {
            expected: (p, p),
            found: w.shape(),
        });
    }
    Ok(())
}

/// Smoothness criterion `g(X, W)`.
pub fn smoothness(x: &DMatrix<f64>, w: &DMatrix<f64>, kind: Smoothness) -> Result<f64> {
    let p = x.nrows();
    check_square(w, p)?;
    Ok(match kind {
        Smoothness::Tikhonov => (x.transpose() * laplacian_of(w) * x).trace(),
        Smoothness::SpatioTemporal => {
            let d = temporal_difference(x);
            (d.transpose() * laplacian_of(w) * d).trace()
        }
        Smoothness::TotalVariation => {
            let mut total = 0.0;
            for i in 0..p {
                for j in 0..p {
                    if w[(i, j)] != 0.0 {
                        total += w[(i, j)] * (x.row(i) - x.row(j)).lp_norm(1);
                    }
                }
            }
            0.5 * total
        }
        Smoothness::DirectedVariation { p_norm } => {
            if !(p_norm > 0.0) {
                return Err(invalid("variation exponent must be positive"));
            }
            let r = directed_operator(w)? * x;
            r.iter().map(|v| v.abs().powf(p_norm)).sum()
        }
    })
}

/// Precision, recall and F1 of a learned edge set against a reference,
/// counting edges with weight above `threshold`.
pub fn support_f1(learned: &UndirectedGraph, truth: &UndirectedGraph, threshold: f64) -> Result<(f64, f64, f64)> {
    if learned.p() != truth.p() {
        return Err(Error::Shape {
            expected: (truth.p(), truth.p()),
            found: (learned.p(), learned.p()),
        });
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for i in 0..truth.p() {
        for j in i + 1..truth.p() {
            let a = learned.w[(i, j)] > threshold;
            let b = truth.w[(i, j)] > threshold;
            match (a, b) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok((precision, recall, f1))
}
