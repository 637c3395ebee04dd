//! Small dense linear-algebra helpers shared across modules.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// (ties keep the backend's order).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |i, c| eig.eigenvectors[(i, order[c])]);
    (values, vectors)
}

/// `V diag(values) Vᵀ`.
pub fn reconstruct(values: &DVector<f64>, vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, k| vectors[(i, k)] * values[k]);
    symmetrize(&(scaled * vectors.transpose()))
}

/// Symmetrizes and raises every eigenvalue below `floor` to `floor`.
/// The matrix is only re-synthesized when some eigenvalue is below the floor.
pub fn floor_spectrum(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let (values, vectors) = sym_eigen_desc(&sym);
    if values.iter().all(|&v| v >= floor) {
        return sym;
    }
    reconstruct(&values.map(|v| v.max(floor)), &vectors)
}

/// Floors the spectrum at `1e-8 * trace / p` (covariance safeguard).
pub fn safeguard_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows().max(1) as f64;
    let floor = (1e-8 * m.trace() / p).max(f64::MIN_POSITIVE);
    floor_spectrum(m, floor)
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// `log det` of an SPD matrix, `None` if not positive definite.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = cholesky(m)?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Orthonormal basis for the column span of `u` (thin QR). Errors when
/// the columns are numerically dependent.
pub fn orthonormalize(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, r) = u.shape();
    if r == 0 || r > p {
        return Err(Error::RankDeficient);
    }
    let qr = u.clone().qr();
    let rmat = qr.r();
    let scale = u.norm().max(f64::MIN_POSITIVE);
    if (0..r).any(|k| rmat[(k, k)].abs() <= 1e-12 * scale) {
        return Err(Error::RankDeficient);
    }
    Ok(qr.q())
}

/// Minimum-norm least-squares solution of `a x = b` via SVD, truncating
/// singular values below `rcond * σ_max`.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = SortedSvd::new(a);
    let eps = (rcond * svd.s[0]).max(f64::MIN_POSITIVE);
    let mut x = DVector::zeros(a.ncols());
    for (k, &s) in svd.s.iter().enumerate() {
        if s > eps {
            let coef = svd.u.column(k).dot(b) / s;
            x += svd.v.column(k) * coef;
        }
    }
    x
}

/// Solves an SPD system, falling back to the minimum-norm solution when
/// Cholesky fails.
pub fn solve_spd_or_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    match cholesky(a) {
        Some(chol) => chol.solve(b),
        None => lstsq_min_norm(a, b, 1e-12),
    }
}

/// Numerical rank with singular-value threshold `rel_tol * σ_1`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = SortedSvd::new(m).s;
    let smax = s.iter().fold(0.0f64, |a, &v| a.max(v));
    if smax <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * smax).count()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Solves `a x = b` for each column of `b` via Cholesky (`None` if `a` is
/// not positive definite).
pub fn chol_solve_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    cholesky(a).map(|c| c.solve(b))
}

/// Lower Cholesky factor, used for Gaussian draws.
pub fn chol_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    cholesky(m).map(|c| c.l())
}

/// Cholesky factor of a PSD matrix, tolerating a zero or numerically
/// indefinite block by flooring the spectrum at zero.
pub fn psd_sqrt_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(l) = chol_factor(m) {
        return l;
    }
    let (values, vectors) = sym_eigen_desc(m);
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, k| vectors[(i, k)] * values[k].max(0.0).sqrt())
}

/// Thin SVD `m = U diag(s) Vᵀ` with singular values in descending order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        if m.nrows() < m.ncols() {
            let t = Self::new(&m.transpose());
            return Self { u: t.v, s: t.s, v: t.u };
        }
        let (mut a, mut v) = one_sided_jacobi(m);
        let k = a.ncols();
        let s: Vec<f64> = (0..k).map(|c| a.column(c).norm()).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
        let smax = order.first().map_or(0.0, |&c| s[c]);
        a = DMatrix::from_fn(m.nrows(), k, |i, c| a[(i, order[c])]);
        v = DMatrix::from_fn(k, k, |i, c| v[(i, order[c])]);
        let s = DVector::from_iterator(k, order.iter().map(|&c| s[c]));
        let tiny = f64::EPSILON * smax * m.nrows() as f64;
        let mut u = DMatrix::zeros(m.nrows(), k);
        for c in 0..k {
            if s[c] > tiny && s[c] > 0.0 {
                u.set_column(c, &(a.column(c) / s[c]));
            } else {
                let q = complete_basis(&u, c);
                u.set_column(c, &q);
            }
        }
        Self { u, s, v }
    }

    /// `U diag(f(s)) Vᵀ` keeping the first `rank` components.
    pub fn compose(&self, rank: usize, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let r = rank.min(self.s.len());
        let mut out = DMatrix::zeros(self.u.nrows(), self.v.nrows());
        for c in 0..r {
            let w = f(self.s[c]);
            if w != 0.0 {
                out.ger(w, &self.u.column(c), &self.v.column(c), 1.0);
            }
        }
        out
    }
}

/// Hestenes one-sided Jacobi on a tall matrix: returns `A V` with mutually
/// orthogonal columns and the accumulated rotation `V`. Rotations are
/// applied until every column pair is orthogonal to working precision.
fn one_sided_jacobi(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, n) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::identity(n, n);
    let tol = f64::EPSILON * rows.max(1) as f64;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    (a, v)
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// A unit vector orthogonal to the first `filled` columns of `u`, taken
/// from the coordinate axes by Gram-Schmidt.
fn complete_basis(u: &DMatrix<f64>, filled: usize) -> DVector<f64> {
    let rows = u.nrows();
    let mut best = DVector::zeros(rows);
    let mut best_norm = -1.0;
    for e in 0..rows {
        let mut x = DVector::zeros(rows);
        x[e] = 1.0;
        for _ in 0..2 {
            for c in 0..filled {
                let d = u.column(c).dot(&x);
                x -= u.column(c) * d;
            }
        }
        let nx = x.norm();
        if nx > best_norm {
            best_norm = nx;
            best = x;
        }
        if nx > 0.5 {
            break;
        }
    }
    best / best_norm
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    SortedSvd::new(m).s
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).sum()
}
