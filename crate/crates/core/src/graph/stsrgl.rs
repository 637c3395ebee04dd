//! Joint imputation and spatio-temporal graph learning for
//! `x_t = A x_{t−1} + ε_t`, `ε_t ~ GMRF(L)`, observed through
//! `Y = M ⊙ (X + N)`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::learning::{gmrf_learn_from, GmrfOptions};
use super::{gmrf_objective, DirectedGraph, UndirectedGraph};
use crate::data::IncompleteMatrix;
use crate::error::{invalid, Error, Result};
use crate::linalg::{solve_spd_or_min_norm, sym_eigen_desc};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StsrglConfig {
    /// Sparsity weight on the Laplacian off-diagonal.
    pub alpha_l: f64,
    /// Sparsity weight on the temporal adjacency.
    pub alpha_a: f64,
    /// Measurement-noise variance.
    pub sigma2: f64,
    /// Block-coordinate cycles `(X, A, L)`. The joint objective is
    /// unbounded below when edge weights grow on pairs whose differences the
    /// data barely constrain, so long runs slowly overfit.
    pub cycles: usize,
    /// Gauss–Seidel sweeps over the columns in each X-step.
    pub x_sweeps: usize,
    /// Proximal-gradient iterations in each A-step.
    pub a_iters: usize,
    pub gmrf: GmrfOptions,
}

impl Default for StsrglConfig {
    fn default() -> Self {
        Self {
            alpha_l: 0.0,
            alpha_a: 1.0,
            sigma2: 0.01,
            cycles: 5,
            x_sweeps: 2,
            a_iters: 100,
            gmrf: GmrfOptions {
                max_iter: 2000,
                tol: 1e-9,
            },
        }
    }
}

impl StsrglConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha_l >= 0.0 && self.alpha_a >= 0.0) {
            return Err(invalid("sparsity weights must be nonnegative"));
        }
        if !(self.sigma2 > 0.0) {
            return Err(invalid("noise variance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsrglFit {
    pub x: DMatrix<f64>,
    pub a: DirectedGraph,
    pub graph: UndirectedGraph,
    /// Joint objective after initialization and after every cycle.
    pub objective: Vec<f64>,
}

fn innovations(x: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    x.columns(1, n - 1) - a * x.columns(0, n - 1)
}

/// `‖M ⊙ (Y − X)‖² / (2σ²) + ½ Σ_t e_tᵀ L e_t
///  + ((n − 1)/2) (−log det* L + α_L ‖L‖_{1,off}) + α_A ‖A‖_{1,1}`
/// with `e_t = x_t − A x_{t−1}`.
pub fn stsrgl_objective(
    x: &DMatrix<f64>,
    y: &IncompleteMatrix,
    a: &DMatrix<f64>,
    l: &DMatrix<f64>,
    cfg: &StsrglConfig,
) -> f64 {
    let n = x.ncols();
    let mut fid = 0.0;
    for j in 0..n {
        for i in y.mask().observed_rows(j) {
            fid += (y.value(i, j) - x[(i, j)]).powi(2);
        }
    }
    let e = innovations(x, a);
    let s = &e * e.transpose() / (n - 1) as f64;
    let half = 0.5 * (n - 1) as f64;
    fid / (2.0 * cfg.sigma2) + half * gmrf_objective(l, &s, cfg.alpha_l) + cfg.alpha_a * a.iter().map(|v| v.abs()).sum::<f64>()
}

/// Exact minimization over each column in turn.
fn x_step(x: &mut DMatrix<f64>, y: &IncompleteMatrix, a: &DMatrix<f64>, l: &DMatrix<f64>, cfg: &StsrglConfig) {
    let (p, n) = x.shape();
    let la = l * a;
    let ala = a.transpose() * &la;
    let inv = 1.0 / cfg.sigma2;
    for _ in 0..cfg.x_sweeps {
        for t in 0..n {
            let mut h = DMatrix::zeros(p, p);
            let mut rhs = DVector::zeros(p);
            for i in y.mask().observed_rows(t) {
                h[(i, i)] += inv;
                rhs[i] += inv * y.value(i, t);
            }
            if t > 0 {
                h += l;
                rhs += &la * x.column(t - 1);
            }
            if t + 1 < n {
                h += &ala;
                rhs += la.transpose() * x.column(t + 1);
            }
            let col = solve_spd_or_min_norm(&h, &rhs);
            x.set_column(t, &col);
        }
    }
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Proximal gradient on `½ Σ e_tᵀ L e_t + α_A ‖A‖₁` with step `1/Lip`,
/// which never increases the objective.
fn a_step(x: &DMatrix<f64>, a: &mut DMatrix<f64>, l: &DMatrix<f64>, cfg: &StsrglConfig) {
    let n = x.ncols();
    let past = x.columns(0, n - 1);
    let next = x.columns(1, n - 1);
    let g = &past * past.transpose();
    let c = &next * past.transpose();
    let lip = sym_eigen_desc(l).0[0] * sym_eigen_desc(&g).0[0];
    if !(lip > 0.0) {
        return;
    }
    let step = 1.0 / lip;
    for _ in 0..cfg.a_iters {
        let grad = l * (&*a * &g - &c);
        let cand = (&*a - grad * step).map(|v| soft(v, step * cfg.alpha_a));
        let moved = (&cand - &*a).amax();
        *a = cand;
        if moved <= 1e-12 * a.amax().max(1.0) {
            break;
        }
    }
}

/// Block-coordinate descent over `X` (column solves), `A` (proximal
/// gradient) and `L` (warm-started GMRF learning on the innovations).
/// Starts from row-mean imputation, `A = 0`, and the GMRF fit of that fill.
pub fn stsrgl_fit(y: &IncompleteMatrix, cfg: &StsrglConfig) -> Result<StsrglFit> {
    cfg.validate()?;
    let (p, n) = y.shape();
    if n < 2 {
        return Err(Error::InsufficientData(alloc::format!("joint learning needs n >= 2, got {n}")));
    }
    let means = y.row_means()?;
    let mut x = y.pinned(&DMatrix::from_fn(p, n, |i, _| means[i]));
    let mut a = DMatrix::zeros(p, p);
    let second = |x: &DMatrix<f64>, a: &DMatrix<f64>| {
        let e = innovations(x, a);
        &e * e.transpose() / (n - 1) as f64
    };
    let mut graph = gmrf_learn_from(&second(&x, &a), cfg.alpha_l, None, &cfg.gmrf)?.graph;
    let mut l = graph.laplacian();
    let mut current = stsrgl_objective(&x, y, &a, &l, cfg);
    let mut trace = alloc::vec![current];
    let slack = |v: f64| 1e-8 * v.abs().max(1.0);
    for cycle in 1..=cfg.cycles {
        let mut check = |value: f64| -> Result<()> {
            if value > current + slack(current) {
                return Err(Error::ObjectiveIncrease {
                    cycle,
                    increase: value - current,
                });
            }
            current = value;
            Ok(())
        };
        x_step(&mut x, y, &a, &l, cfg);
        check(stsrgl_objective(&x, y, &a, &l, cfg))?;
        a_step(&x, &mut a, &l, cfg);
        check(stsrgl_objective(&x, y, &a, &l, cfg))?;
        graph = gmrf_learn_from(&second(&x, &a), cfg.alpha_l, Some(graph.weights()), &cfg.gmrf)?.graph;
        l = graph.laplacian();
        check(stsrgl_objective(&x, y, &a, &l, cfg))?;
        trace.push(current);
    }
    Ok(StsrglFit {
        x,
        a: DirectedGraph::new(a)?,
        graph,
        objective: trace,
    })
}
