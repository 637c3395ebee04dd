//! Derivative-free-gradient BFGS for small smooth problems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the gradient infinity-norm falls below this.
    pub gtol: f64,
    /// Backtracking halvings allowed per line search.
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-9,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference gradient. Falls back to a one-sided difference when
/// one side is not finite, and to zero when neither is.
pub fn numeric_gradient(f: &impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, fx: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let h = 1e-6 * x[k].abs().max(1.0);
        probe[k] = x[k] + h;
        let fp = f(&probe);
        probe[k] = x[k] - h;
        let fm = f(&probe);
        probe[k] = x[k];
        g[k] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => 0.0,
        };
    }
    g
}

/// Minimizes `f` from `x0`. Points where `f` is not finite are treated as
/// infeasible and rejected by the line search, so the returned value is
/// never worse than `f(x0)`.
pub fn bfgs_minimize(f: impl Fn(&DVector<f64>) -> f64, x0: &DVector<f64>, opts: BfgsOptions) -> BfgsResult {
    let n = x0.len();
    let mut x = x0.clone();
    let mut fx = f(&x);
    let mut g = numeric_gradient(&f, &x, fx);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        if g.amax() < opts.gtol {
            converged = true;
            break;
        }
        let mut dir = -(&h_inv * &g);
        if dir.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let cand = &x + &dir * step;
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // no descent along this direction: retry once with steepest descent
            if h_inv != DMatrix::identity(n, n) {
                h_inv = DMatrix::identity(n, n);
                continue;
            }
            converged = g.amax() < opts.gtol.sqrt();
            break;
        };
        let g_new = numeric_gradient(&f, &x_new, f_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
        }
        let small_change = (fx - f_new).abs() <= 1e-15 * fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if small_change && g.amax() < opts.gtol.sqrt() {
            converged = true;
            break;
        }
    }
    BfgsResult {
        x,
        value: fx,
        iterations,
        converged,
    }
}
