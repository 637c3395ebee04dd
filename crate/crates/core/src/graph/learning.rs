//! Graph learning from complete data: Laplacian-constrained GMRF and sparse
//! VAR adjacency.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{DirectedGraph, UndirectedGraph};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, lstsq_min_norm};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmrfOptions {
    pub max_iter: usize,
    /// Stop when no edge weight moves more than `tol · max(1, max w)`.
    pub tol: f64,
}

impl Default for GmrfOptions {
    fn default() -> Self {
        Self { max_iter: 20_000, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmrfFit {
    pub graph: UndirectedGraph,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_second_moment(s: &DMatrix<f64>) -> Result<()> {
    let p = s.nrows();
    if s.ncols() != p {
        return Err(Error::Shape {
            expected: (p, p),
            found: s.shape(),
        });
    }
    if p < 2 {
        return Err(invalid("graph learning needs at least two nodes"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(invalid("second-moment matrix must be finite"));
    }
    if s.iter().all(|&v| v == 0.0) {
        return Err(invalid("second-moment matrix is zero"));
    }
    Ok(())
}

/// `tr(L S) − log det*(L) + α ‖L‖_{1,off}`, with `det*` evaluated as
/// `det(L + 11ᵀ/p)`. Infinite when `L + 11ᵀ/p` is not positive definite
/// (a disconnected graph).
pub fn gmrf_objective(l: &DMatrix<f64>, s: &DMatrix<f64>, alpha: f64) -> f64 {
    let p = l.nrows();
    let lifted = l + DMatrix::from_element(p, p, 1.0 / p as f64);
    let Some(chol) = cholesky(&lifted) else {
        return f64::INFINITY;
    };
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let off: f64 = (0..p).flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| l[(i, j)].abs()).sum();
    l.component_mul(s).sum() - logdet + alpha * off
}

/// Edge-weight parametrization: `L(w) = Σ_e w_e (e_i − e_j)(e_i − e_j)ᵀ`.
struct EdgeProblem {
    p: usize,
    pairs: Vec<(usize, usize)>,
    /// `s_e + 2α`, the linear coefficient of each weight.
    linear: DVector<f64>,
}

impl EdgeProblem {
    fn new(s: &DMatrix<f64>, alpha: f64) -> Self {
        let p = s.nrows();
        let mut pairs = Vec::with_capacity(p * (p - 1) / 2);
        for i in 0..p {
            for j in i + 1..p {
                pairs.push((i, j));
            }
        }
        let linear = DVector::from_iterator(
            pairs.len(),
            pairs.iter().map(|&(i, j)| s[(i, i)] + s[(j, j)] - s[(i, j)] - s[(j, i)] + 2.0 * alpha),
        );
        Self { p, pairs, linear }
    }

    fn weights_to_matrix(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for (e, &(i, j)) in self.pairs.iter().enumerate() {
            m[(i, j)] = w[e];
            m[(j, i)] = w[e];
        }
        m
    }

    fn from_matrix(&self, w: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.pairs.len(), self.pairs.iter().map(|&(i, j)| w[(i, j)].max(0.0)))
    }

    /// Objective and gradient; `None` outside the domain.
    fn eval(&self, w: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let p = self.p;
        let mut lifted = DMatrix::from_element(p, p, 1.0 / p as f64);
        for (e, &(i, j)) in self.pairs.iter().enumerate() {
            let v = w[e];
            lifted[(i, i)] += v;
            lifted[(j, j)] += v;
            lifted[(i, j)] -= v;
            lifted[(j, i)] -= v;
        }
        let chol = cholesky(&lifted)?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let k = chol.inverse();
        let value = self.linear.dot(w) - logdet;
        let grad = DVector::from_iterator(
            self.pairs.len(),
            self.pairs.iter().enumerate().map(|(e, &(i, j))| self.linear[e] - (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)])),
        );
        value.is_finite().then_some((value, grad))
    }
}

/// Laplacian-constrained GMRF learning,
/// `min_{L ∈ Ω_L} tr(L S) − log det*(L) + α ‖L‖_{1,off}`,
/// by projected gradient on nonnegative edge weights with backtracking and
/// Barzilai–Borwein step proposals.
pub fn gmrf_learn(s: &DMatrix<f64>, alpha: f64, opts: &GmrfOptions) -> Result<GmrfFit> {
    gmrf_learn_from(s, alpha, None, opts)
}

/// As [`gmrf_learn`], optionally warm-started from an adjacency matrix
/// (which must describe a connected graph).
pub(crate) fn gmrf_learn_from(s: &DMatrix<f64>, alpha: f64, start: Option<&DMatrix<f64>>, opts: &GmrfOptions) -> Result<GmrfFit> {
    check_second_moment(s)?;
    if !(alpha >= 0.0) {
        return Err(invalid("alpha must be nonnegative"));
    }
    let prob = EdgeProblem::new(s, alpha);
    let p = prob.p as f64;
    let uniform = |prob: &EdgeProblem| {
        // best complete graph with equal weights
        let mean = prob.linear.mean();
        DVector::from_element(prob.pairs.len(), if mean > 0.0 { 2.0 / (p * mean) } else { 1.0 })
    };
    let mut w = match start {
        Some(w0) => prob.from_matrix(w0),
        None => uniform(&prob),
    };
    let (mut f, mut g) = match prob.eval(&w) {
        Some(v) => v,
        None => {
            w = uniform(&prob);
            prob.eval(&w).ok_or(Error::Singular("initial Laplacian"))?
        }
    };
    let mut step = 1.0 / g.amax().max(1e-12);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let mut accepted = None;
        let mut eta = step;
        for _ in 0..100 {
            let cand = (&w - &g * eta).map(|v| v.max(0.0));
            let delta = &cand - &w;
            if let Some((fc, gc)) = prob.eval(&cand) {
                if fc <= f + g.dot(&delta) + delta.norm_squared() / (2.0 * eta) {
                    accepted = Some((cand, fc, gc, delta));
                    break;
                }
            }
            eta *= 0.5;
        }
        let Some((cand, fc, gc, delta)) = accepted else {
            break;
        };
        let moved = delta.amax();
        let dy = &gc - &g;
        let curv = delta.dot(&dy);
        step = if curv > 0.0 { (delta.norm_squared() / curv).clamp(1e-12, 1e12) } else { eta * 2.0 };
        w = cand;
        f = fc;
        g = gc;
        if moved <= opts.tol * w.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(GmrfFit {
        graph: UndirectedGraph::new(prob.weights_to_matrix(&w))?,
        objective: f,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarOptions {
    pub max_sweeps: usize,
    /// Duality-gap tolerance, relative to `max(1, ‖y‖²)` per row.
    pub gap_tol: f64,
}

impl Default for VarOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 100_000,
            gap_tol: 1e-8,
        }
    }
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// One lasso row `min_a aᵀ G a − 2 cᵀ a + yy + α ‖a‖₁` by cyclic coordinate
/// descent from `a`, stopped on the duality gap.
pub(crate) fn lasso_row(g: &DMatrix<f64>, c: &DVector<f64>, yy: f64, alpha: f64, a: &mut DVector<f64>, opts: &VarOptions) {
    let p = c.len();
    if alpha == 0.0 {
        *a = lstsq_min_norm(g, c, 1e-14);
        return;
    }
    let lambda = 0.5 * alpha;
    let mut ga = g * &*a;
    for _ in 0..opts.max_sweeps {
        for j in 0..p {
            let gjj = g[(j, j)];
            let old = a[j];
            let next = if gjj > 0.0 { soft(c[j] - (ga[j] - gjj * old), lambda) / gjj } else { 0.0 };
            if next != old {
                let d = next - old;
                ga.axpy(d, &g.column(j), 1.0);
                a[j] = next;
            }
        }
        let ca = c.dot(a);
        let primal = yy - 2.0 * ca + a.dot(&ga) + alpha * a.lp_norm(1);
        let r2 = (yy - 2.0 * ca + a.dot(&ga)).max(0.0);
        let corr = (c - &ga).amax();
        let scale = if corr > lambda { lambda / corr } else { 1.0 };
        let dual = 2.0 * (scale * (yy - ca) - 0.5 * scale * scale * r2);
        if primal - dual <= opts.gap_tol * yy.max(1.0) {
            return;
        }
    }
}

/// Sparse VAR(1) adjacency:
/// `min_A Σ_{t≥2} ‖x_t − A x_{t−1}‖² + α ‖A‖_{1,1}`, one lasso per row.
pub fn var_learn(x: &DMatrix<f64>, alpha: f64, opts: &VarOptions) -> Result<DirectedGraph> {
    let (p, n) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientData(alloc::format!("VAR learning needs n >= 2, got {n}")));
    }
    if !(alpha >= 0.0) {
        return Err(invalid("alpha must be nonnegative"));
    }
    let past = x.columns(0, n - 1);
    let next = x.columns(1, n - 1);
    let g = &past * past.transpose();
    let cross = &next * past.transpose();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let c = cross.row(i).transpose();
        let yy = next.row(i).norm_squared();
        let mut row = DVector::zeros(p);
        lasso_row(&g, &c, yy, alpha, &mut row, opts);
        a.set_row(i, &row.transpose());
    }
    DirectedGraph::new(a)
}
