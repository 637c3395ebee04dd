//! Graph-signal recovery:
//! `argmin_X d(X, Y; M) + α g(X, W) + β h(X)`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{directed_operator, Smoothness, UndirectedGraph};
use crate::data::IncompleteMatrix;
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, solve_spd_or_min_norm, submatrix, subvector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fidelity {
    /// Observed entries are held fixed.
    ExactConstraint,
    /// `‖M ⊙ (Y − X)‖²_F`.
    Squared,
    /// `Σ H_δ(M ⊙ (Y − X))`.
    Huber { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    None,
    /// `‖X‖²_F`, weighted by `β`.
    Frobenius,
    /// `‖X‖_*`; not supported by these solvers.
    Nuclear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    pub fidelity: Fidelity,
    pub smoothness: Smoothness,
    pub alpha: f64,
    pub beta: f64,
    pub regularizer: Regularizer,
    /// Relative tolerance for the iterative solvers (CG, IRLS, ADMM).
    pub tol: f64,
    /// Iteration cap for IRLS and ADMM.
    pub max_iter: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            fidelity: Fidelity::ExactConstraint,
            smoothness: Smoothness::Tikhonov,
            alpha: 1.0,
            beta: 0.0,
            regularizer: Regularizer::None,
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(invalid("alpha and beta must be nonnegative"));
        }
        if let Fidelity::Huber { delta } = self.fidelity {
            if !(delta > 0.0) {
                return Err(invalid("huber delta must be positive"));
            }
        }
        if let Smoothness::DirectedVariation { p_norm } = self.smoothness {
            if p_norm != 1.0 && p_norm != 2.0 {
                return Err(Error::Unsupported("directed variation recovery supports p = 1 or p = 2"));
            }
        }
        if self.regularizer == Regularizer::Nuclear {
            return Err(Error::Unsupported("nuclear-norm regularized graph recovery"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(invalid("solver tolerance and iteration cap must be positive"));
        }
        Ok(())
    }

    fn ridge(&self) -> f64 {
        match self.regularizer {
            Regularizer::Frobenius => self.beta,
            _ => 0.0,
        }
    }
}

fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// `Σ H_δ(M ⊙ (Y − X))` with `H_δ` quadratic up to `δ` and linear beyond.
pub fn huber_fidelity(x: &DMatrix<f64>, y: &IncompleteMatrix, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(invalid("huber delta must be positive"));
    }
    check_shape(x, y)?;
    let mut total = 0.0;
    for j in 0..y.ncols() {
        for i in y.mask().observed_rows(j) {
            total += huber(y.value(i, j) - x[(i, j)], delta);
        }
    }
    Ok(total)
}

fn check_shape(x: &DMatrix<f64>, y: &IncompleteMatrix) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::Shape {
            expected: y.shape(),
            found: x.shape(),
        });
    }
    Ok(())
}

fn check_graph(graph_p: usize, y: &IncompleteMatrix) -> Result<()> {
    if graph_p != y.nrows() {
        return Err(Error::Shape {
            expected: (y.nrows(), y.nrows()),
            found: (graph_p, graph_p),
        });
    }
    Ok(())
}

/// Every missing node in each column must share a component with an
/// observed node of the same column.
fn check_connected(components: &[usize], y: &IncompleteMatrix) -> Result<()> {
    let count = components.iter().copied().max().map_or(0, |m| m + 1);
    for j in 0..y.ncols() {
        let mut anchored = alloc::vec![false; count];
        for i in y.mask().observed_rows(j) {
            anchored[components[i]] = true;
        }
        if y.mask().missing_rows(j).iter().any(|&i| !anchored[components[i]]) {
            return Err(Error::Disconnected);
        }
    }
    Ok(())
}

/// Dispatches on `cfg.smoothness`. `w` is the adjacency matrix; undirected
/// kinds validate it as an [`UndirectedGraph`].
pub fn recover(y: &IncompleteMatrix, w: &DMatrix<f64>, cfg: &RecoveryConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    match cfg.smoothness {
        Smoothness::DirectedVariation { p_norm } => {
            check_graph(w.nrows(), y)?;
            let b = directed_operator(w)?;
            if p_norm == 2.0 {
                quadratic_columns(y, &(b.transpose() * &b), None, cfg)
            } else {
                Ok(l1_recover(y, &b, None, cfg)?.x)
            }
        }
        _ => {
            let graph = UndirectedGraph::new(w.clone())?;
            match cfg.smoothness {
                Smoothness::TotalVariation => Ok(recover_tv(y, &graph, cfg)?.x),
                Smoothness::SpatioTemporal => spatiotemporal(y, &graph, cfg),
                _ => recover_tikhonov(y, &graph, cfg),
            }
        }
    }
}

/// Recovery with the Tikhonov term `α tr(Xᵀ L X)` (`cfg.smoothness` is
/// ignored).
///
/// With exact constraints each column is the harmonic extension
/// `x_m = −(α L_mm + β I)⁻¹ α L_mo x_o`; squared fidelity solves
/// `(D_m + α L + β I) x = D_m y` per column; Huber fidelity runs IRLS on the
/// same system.
pub fn recover_tikhonov(y: &IncompleteMatrix, graph: &UndirectedGraph, cfg: &RecoveryConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    check_graph(graph.p(), y)?;
    let components = graph.components();
    quadratic_columns(y, &graph.laplacian(), Some(&components), cfg)
}

/// Column-separable quadratic smoothness `α xᵀ K x`.
fn quadratic_columns(
    y: &IncompleteMatrix,
    k: &DMatrix<f64>,
    components: Option<&[usize]>,
    cfg: &RecoveryConfig,
) -> Result<DMatrix<f64>> {
    let (p, n) = y.shape();
    let ridge = cfg.ridge();
    let eye = DMatrix::<f64>::identity(p, p);
    let mut out = y.filled_with(0.0);
    match cfg.fidelity {
        Fidelity::ExactConstraint => {
            if cfg.alpha == 0.0 && ridge == 0.0 {
                return Err(invalid("exact recovery needs alpha > 0 or a Frobenius term"));
            }
            if let (Some(c), true) = (components, ridge == 0.0) {
                check_connected(c, y)?;
            }
            for j in 0..n {
                let mis = y.mask().missing_rows(j);
                if mis.is_empty() {
                    continue;
                }
                let obs = y.mask().observed_rows(j);
                let a = submatrix(k, &mis, &mis) * cfg.alpha + DMatrix::identity(mis.len(), mis.len()) * ridge;
                let xo = subvector(&y.raw_values().column(j).into_owned(), &obs);
                let rhs = -(submatrix(k, &mis, &obs) * xo) * cfg.alpha;
                let chol = cholesky(&a).ok_or(if components.is_some() {
                    Error::Disconnected
                } else {
                    Error::Singular("missing-block system")
                })?;
                let xm = chol.solve(&rhs);
                for (r, &i) in mis.iter().enumerate() {
                    out[(i, j)] = xm[r];
                }
            }
        }
        Fidelity::Squared => {
            let base = k * cfg.alpha + &eye * ridge;
            for j in 0..n {
                let (d, yj) = column_fidelity(y, j);
                let a = &base + DMatrix::from_diagonal(&d);
                out.set_column(j, &solve_spd_or_min_norm(&a, &d.component_mul(&yj)));
            }
        }
        Fidelity::Huber { delta } => {
            let base = (k * cfg.alpha + &eye * ridge) * 2.0;
            for j in 0..n {
                let (d, yj) = column_fidelity(y, j);
                let solve = |omega: &DVector<f64>| {
                    let a = &base + DMatrix::from_diagonal(omega);
                    solve_spd_or_min_norm(&a, &omega.component_mul(&yj))
                };
                let mut x = solve(&d);
                for _ in 0..cfg.max_iter {
                    let omega = huber_weights(&x, &yj, &d, delta);
                    let next = solve(&omega);
                    let moved = (&next - &x).amax();
                    x = next;
                    if moved <= cfg.tol * (1.0 + x.amax()) {
                        break;
                    }
                }
                out.set_column(j, &x);
            }
        }
    }
    Ok(out)
}

/// Observation indicator and zero-filled values of column `j`.
fn column_fidelity(y: &IncompleteMatrix, j: usize) -> (DVector<f64>, DVector<f64>) {
    let p = y.nrows();
    let d = DVector::from_fn(p, |i, _| if y.is_observed(i, j) { 1.0 } else { 0.0 });
    let v = DVector::from_fn(p, |i, _| y.get(i, j).unwrap_or(0.0));
    (d, v)
}

/// IRLS weights `ψ(r)/r` of the Huber loss on observed entries.
fn huber_weights(x: &DVector<f64>, y: &DVector<f64>, d: &DVector<f64>, delta: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        if d[i] == 0.0 {
            return 0.0;
        }
        let r = (y[i] - x[i]).abs();
        if r <= delta {
            1.0
        } else {
            delta / r
        }
    })
}

/// `Z ↦ L Z T` with `T = DᵀD` the Gram matrix of the temporal difference.
fn st_apply(l: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let lz = l * z;
    let n = z.ncols();
    let mut out = lz.clone();
    for t in 0..n {
        let mut col = lz.column(t) * if t + 1 < n { 2.0 } else { 1.0 };
        if t > 0 {
            col -= lz.column(t - 1);
        }
        if t + 1 < n {
            col -= lz.column(t + 1);
        }
        out.set_column(t, &col);
    }
    out
}

/// Conjugate gradients on a symmetric positive semidefinite operator,
/// started at zero.
fn conjugate_gradient(apply: impl Fn(&DMatrix<f64>) -> DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(b.nrows(), b.ncols());
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rr = r.norm_squared();
    let target = (tol * b.norm()).powi(2);
    let cap = 10 * b.len().max(10);
    for _ in 0..cap {
        if rr <= target {
            break;
        }
        let ad = apply(&d);
        let curv = d.dot(&ad);
        if !(curv > 0.0) {
            break;
        }
        let step = rr / curv;
        x += &d * step;
        r -= &ad * step;
        let next = r.norm_squared();
        d = &r + &d * (next / rr);
        rr = next;
    }
    x
}

/// Spatio-temporal smoothness couples the columns; solved jointly by CG.
fn spatiotemporal(y: &IncompleteMatrix, graph: &UndirectedGraph, cfg: &RecoveryConfig) -> Result<DMatrix<f64>> {
    check_graph(graph.p(), y)?;
    let l = graph.laplacian();
    let ridge = cfg.ridge();
    let m = y.mask().to_indicator();
    let y0 = y.filled_with(0.0);
    let smooth = |z: &DMatrix<f64>| st_apply(&l, z) * cfg.alpha + z * ridge;
    match cfg.fidelity {
        Fidelity::ExactConstraint => {
            if cfg.alpha == 0.0 && ridge == 0.0 {
                return Err(invalid("exact recovery needs alpha > 0 or a Frobenius term"));
            }
            if ridge == 0.0 {
                check_connected(&graph.components(), y)?;
            }
            let free = m.map(|v| 1.0 - v);
            let rhs = -smooth(&y0).component_mul(&free);
            let z = conjugate_gradient(|z| smooth(z).component_mul(&free), &rhs, cfg.tol);
            Ok(y0 + z.component_mul(&free))
        }
        Fidelity::Squared => {
            let rhs = y0.component_mul(&m);
            Ok(conjugate_gradient(|x| x.component_mul(&m) + smooth(x), &rhs, cfg.tol))
        }
        Fidelity::Huber { delta } => {
            let solve = |omega: &DMatrix<f64>| {
                conjugate_gradient(|x| x.component_mul(omega) + smooth(x) * 2.0, &y0.component_mul(omega), cfg.tol)
            };
            let mut x = solve(&m);
            for _ in 0..cfg.max_iter {
                let omega = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| {
                    if m[(i, j)] == 0.0 {
                        return 0.0;
                    }
                    let r = (y0[(i, j)] - x[(i, j)]).abs();
                    if r <= delta {
                        1.0
                    } else {
                        delta / r
                    }
                });
                let next = solve(&omega);
                let moved = (&next - &x).amax();
                x = next;
                if moved <= cfg.tol.max(1e-9) * (1.0 + x.amax()) {
                    break;
                }
            }
            Ok(x)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvResult {
    pub x: DMatrix<f64>,
    /// Objective of the returned point, summed over columns.
    pub objective: f64,
    /// Largest per-column ADMM iteration count.
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted incidence operator: one row `W_ij (e_i − e_j)` per edge, so that
/// `‖B x‖₁` is the graph total variation.
fn incidence(graph: &UndirectedGraph) -> DMatrix<f64> {
    let edges = graph.edges(0.0);
    let mut b = DMatrix::zeros(edges.len(), graph.p());
    for (e, &(i, j, w)) in edges.iter().enumerate() {
        b[(e, i)] = w;
        b[(e, j)] = -w;
    }
    b
}

/// Total-variation recovery, `α ½ Σ W_ij ‖X_i − X_j‖₁`, by ADMM over the edge
/// differences (`cfg.smoothness` is ignored). Exact-constraint and squared
/// fidelities are supported; the best-objective iterate is returned.
pub fn recover_tv(y: &IncompleteMatrix, graph: &UndirectedGraph, cfg: &RecoveryConfig) -> Result<TvResult> {
    cfg.validate()?;
    check_graph(graph.p(), y)?;
    let components = graph.components();
    l1_recover(y, &incidence(graph), Some(&components), cfg)
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// `min d(x, y) + α‖B x‖₁ + β‖x‖²` per column.
fn l1_recover(y: &IncompleteMatrix, b: &DMatrix<f64>, components: Option<&[usize]>, cfg: &RecoveryConfig) -> Result<TvResult> {
    if let Fidelity::Huber { .. } = cfg.fidelity {
        return Err(Error::Unsupported("huber fidelity with an l1 smoothness term"));
    }
    let (p, n) = y.shape();
    let ridge = cfg.ridge();
    let exact = cfg.fidelity == Fidelity::ExactConstraint;
    if exact && cfg.alpha == 0.0 && ridge == 0.0 {
        return Err(invalid("exact recovery needs alpha > 0 or a Frobenius term"));
    }
    if let (Some(c), true) = (components, exact && ridge == 0.0) {
        check_connected(c, y)?;
    }
    let mut out = y.filled_with(0.0);
    let mut total = 0.0;
    let mut iterations = 0;
    let mut converged = true;
    let rho = if cfg.alpha > 0.0 { cfg.alpha } else { 1.0 };
    for j in 0..n {
        let (d, yj) = column_fidelity(y, j);
        // free coordinates and their system matrix
        let free: Vec<usize> = if exact { y.mask().missing_rows(j) } else { (0..p).collect() };
        if free.is_empty() {
            let x = yj.clone();
            total += cfg.alpha * (b * &x).lp_norm(1) + ridge * x.norm_squared();
            continue;
        }
        let bf = DMatrix::from_fn(b.nrows(), free.len(), |e, k| b[(e, free[k])]);
        let fixed = if exact { b * &yj } else { DVector::zeros(b.nrows()) };
        let mut h = bf.transpose() * &bf * rho + DMatrix::identity(free.len(), free.len()) * (2.0 * ridge);
        if !exact {
            h += DMatrix::from_diagonal(&d) * 2.0;
        }
        let chol = cholesky(&h);
        if chol.is_none() && exact {
            return Err(if components.is_some() { Error::Disconnected } else { Error::Singular("missing-block system") });
        }
        let pinv = if chol.is_none() { Some(h.clone().pseudo_inverse(1e-12).map_err(|_| Error::Singular("tv system"))?) } else { None };
        let solve = |rhs: &DVector<f64>| match (&chol, &pinv) {
            (Some(c), _) => c.solve(rhs),
            (None, Some(pi)) => pi * rhs,
            _ => unreachable!(),
        };
        let assemble = |xf: &DVector<f64>| {
            let mut x = if exact { yj.clone() } else { DVector::zeros(p) };
            for (k, &i) in free.iter().enumerate() {
                x[i] = xf[k];
            }
            x
        };
        let objective = |x: &DVector<f64>| {
            let fid = if exact { 0.0 } else { (0..p).map(|i| d[i] * (yj[i] - x[i]).powi(2)).sum() };
            fid + cfg.alpha * (b * x).lp_norm(1) + ridge * x.norm_squared()
        };
        let data_rhs = if exact { DVector::zeros(free.len()) } else { DVector::from_fn(p, |i, _| 2.0 * d[i] * yj[i]) };

        let mut z = DVector::zeros(b.nrows());
        let mut u = DVector::zeros(b.nrows());
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut col_converged = false;
        let mut k_used = 0;
        for k in 1..=cfg.max_iter {
            k_used = k;
            let rhs = &data_rhs + bf.transpose() * (&z - &u - &fixed) * rho;
            let xf = solve(&rhs);
            let bx = &bf * &xf + &fixed;
            let z_old = z.clone();
            z = (&bx + &u).map(|v| soft(v, cfg.alpha / rho));
            u += &bx - &z;
            let x = assemble(&xf);
            let obj = objective(&x);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, x));
            }
            let primal = (&bx - &z).norm();
            let dual = rho * (bf.transpose() * (&z - &z_old)).norm();
            let scale = bx.norm().max(z.norm()).max(1.0);
            if primal <= cfg.tol * scale && dual <= cfg.tol * scale {
                col_converged = true;
                break;
            }
        }
        let (obj, x) = best.expect("at least one iteration");
        total += obj;
        out.set_column(j, &x);
        iterations = iterations.max(k_used);
        converged &= col_converged;
    }
    Ok(TvResult {
        x: out,
        objective: total,
        iterations,
        converged,
    })
}
