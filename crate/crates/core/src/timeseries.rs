//! AR(1) with Student-t innovations on gappy univariate series:
//! `x_t = μ + a x_{t−1} + ε_t`, `ε_t ~ t(0, σ², ν)`.
//!
//! Gaps are `NaN`. The likelihood conditions on the first observed point.
//! Leading and trailing gaps carry no information about the parameters
//! under that likelihood; the fitter works on the span between the first
//! and last observation and the imputer fills the ends by simulating the
//! model outward.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::em::{EStep, EmConfig};
use crate::error::{invalid, Error, Result};
use crate::rng::{GapRng, SeedSpec};
use crate::special::ln_gamma;

/// Gibbs sweeps run before each imputation draw is taken.
pub const IMPUTE_BURN_IN: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1StudentParams {
    /// Drift.
    pub mu: f64,
    pub a: f64,
    pub sigma: f64,
    pub nu: f64,
}

impl Ar1StudentParams {
    pub fn new(mu: f64, a: f64, sigma: f64, nu: f64) -> Result<Self> {
        let p = Self { mu, a, sigma, nu };
        p.validate(false)?;
        Ok(p)
    }

    pub fn validate(&self, stationary: bool) -> Result<()> {
        if !(self.mu.is_finite() && self.a.is_finite()) {
            return Err(invalid("drift and AR coefficient must be finite"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid("innovation scale must be positive"));
        }
        if !(self.nu > 0.0) {
            return Err(invalid("degrees of freedom must be positive"));
        }
        if stationary && self.a.abs() >= 1.0 {
            return Err(invalid("stationarity requires |a| < 1"));
        }
        Ok(())
    }

    /// Log density of one innovation.
    pub fn ln_innovation(&self, e: f64) -> f64 {
        ln_t(e, self.sigma, self.nu)
    }

    fn residual(&self, prev: f64, next: f64) -> f64 {
        next - self.mu - self.a * prev
    }
}

fn ln_t(e: f64, sigma: f64, nu: f64) -> f64 {
    let z = e / sigma;
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * core::f64::consts::PI).ln() - sigma.ln()
        - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
}

/// Conditional log-likelihood `Σ_t log f(x_t | x_{t−1})` of a complete
/// series.
pub fn ar1t_loglik(x: &[f64], params: &Ar1StudentParams) -> f64 {
    x.windows(2).map(|w| params.ln_innovation(params.residual(w[0], w[1]))).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Options {
    /// Interior gaps longer than this are reported in [`Ar1Fit::long_gaps`].
    pub max_gap: usize,
    /// Keep `|a| < 1` in every M-step.
    pub stationary: bool,
    /// Metropolis sweeps over the missing points per SAEM iteration.
    pub mh_sweeps: usize,
}

impl Default for Ar1Options {
    fn default() -> Self {
        Self {
            max_gap: 100,
            stationary: false,
            mh_sweeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Fit {
    /// Average of the chain after the SAEM burn-in.
    pub params: Ar1StudentParams,
    /// Parameters after every iteration.
    pub chain: Vec<Ar1StudentParams>,
    /// Fraction of accepted Metropolis proposals.
    pub acceptance: f64,
    /// `(start, length)` of interior gaps longer than the cap.
    pub long_gaps: Vec<(usize, usize)>,
}

/// `(start, length)` of every run of missing values strictly between two
/// observations.
pub fn interior_gaps(y: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let Some((first, last)) = observed_span(y) else {
        return out;
    };
    let mut t = first;
    while t < last {
        if y[t].is_nan() {
            let s = t;
            while y[t].is_nan() {
                t += 1;
            }
            out.push((s, t - s));
        } else {
            t += 1;
        }
    }
    out
}

fn observed_span(y: &[f64]) -> Option<(usize, usize)> {
    let first = y.iter().position(|v| !v.is_nan())?;
    let last = y.iter().rposition(|v| !v.is_nan())?;
    Some((first, last))
}

fn check_series(y: &[f64]) -> Result<(usize, usize)> {
    if y.iter().any(|v| v.is_infinite()) {
        return Err(invalid("series values must be finite or NaN"));
    }
    let observed = y.iter().filter(|v| !v.is_nan()).count();
    if observed < 2 {
        return Err(Error::InsufficientData(alloc::format!(
            "AR(1) needs at least 2 observed points, got {observed}"
        )));
    }
    Ok(observed_span(y).unwrap())
}

/// Linear interpolation across interior gaps; the ends are left as `NaN`.
fn interpolate(y: &[f64]) -> Vec<f64> {
    let mut x = y.to_vec();
    for (s, len) in interior_gaps(y) {
        let (lo, hi) = (y[s - 1], y[s + len]);
        for k in 0..len {
            let f = (k + 1) as f64 / (len + 1) as f64;
            x[s + k] = lo + f * (hi - lo);
        }
    }
    x
}

/// Ordinary least squares on consecutive observed pairs, with `ν = 10`.
/// Falls back to `a = 0` when fewer than three pairs exist.
pub fn ar1_ols_init(y: &[f64]) -> Result<Ar1StudentParams> {
    check_series(y)?;
    let pairs: Vec<(f64, f64)> = y
        .windows(2)
        .filter(|w| !w[0].is_nan() && !w[1].is_nan())
        .map(|w| (w[0], w[1]))
        .collect();
    let fallback = || {
        let obs: Vec<f64> = y.iter().copied().filter(|v| !v.is_nan()).collect();
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let v = obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / obs.len() as f64;
        Ar1StudentParams::new(m, 0.0, v.sqrt().max(1e-8), 10.0)
    };
    if pairs.len() < 3 {
        return fallback();
    }
    let mut s = Stats::default();
    for &(p, q) in &pairs {
        s.add(p, q, 1.0);
    }
    match s.solve(false) {
        Some((mu, a, sigma)) if sigma > 0.0 => Ar1StudentParams::new(mu, a, sigma, 10.0),
        _ => fallback(),
    }
}

/// Weighted sums over transitions `(x_{t−1}, x_t)` with weight `τ_t`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Stats {
    count: f64,
    w: f64,
    wp: f64,
    wpp: f64,
    wq: f64,
    wpq: f64,
    wqq: f64,
}

impl Stats {
    fn add(&mut self, p: f64, q: f64, w: f64) {
        self.count += 1.0;
        self.w += w;
        self.wp += w * p;
        self.wpp += w * p * p;
        self.wq += w * q;
        self.wpq += w * p * q;
        self.wqq += w * q * q;
    }

    fn blend(&mut self, other: &Stats, gamma: f64) {
        let mix = |a: &mut f64, b: f64| *a += gamma * (b - *a);
        mix(&mut self.count, other.count);
        mix(&mut self.w, other.w);
        mix(&mut self.wp, other.wp);
        mix(&mut self.wpp, other.wpp);
        mix(&mut self.wq, other.wq);
        mix(&mut self.wpq, other.wpq);
        mix(&mut self.wqq, other.wqq);
    }

    /// Weighted least squares for `(μ, a)` and `σ² = Σ τ e² / count`.
    /// Under `stationary`, an unconstrained `a` outside `(−1, 1)` is moved to
    /// the nearest admissible value and `μ` re-solved.
    fn solve(&self, stationary: bool) -> Option<(f64, f64, f64)> {
        let det = self.w * self.wpp - self.wp * self.wp;
        if !(det > 1e-12 * self.w * self.wpp.max(f64::MIN_POSITIVE)) {
            return None;
        }
        let mut a = (self.w * self.wpq - self.wp * self.wq) / det;
        let bound = 1.0 - 1e-8;
        if stationary && a.abs() > bound {
            a = bound.copysign(a);
        }
        let mu = (self.wq - a * self.wp) / self.w;
        let rss = self.wqq - 2.0 * mu * self.wq - 2.0 * a * self.wpq
            + mu * mu * self.w
            + 2.0 * mu * a * self.wp
            + a * a * self.wpp;
        Some((mu, a, (rss.max(0.0) / self.count).sqrt()))
    }
}

/// 21 log-spaced points on `[2.1, 100]`.
pub fn nu_grid() -> Vec<f64> {
    let (lo, hi) = (2.1f64.ln(), 100f64.ln());
    (0..21).map(|i| (lo + (hi - lo) * i as f64 / 20.0).exp()).collect()
}

/// Independence Metropolis update of `x[t]` given both neighbours. The
/// Gaussian proposal sits at the two-sided conditional mean and carries the
/// innovation variance (`σ²ν/(ν−2)` when finite) shrunk by `1 + a²`.
fn mh_site(x: &mut [f64], t: usize, params: &Ar1StudentParams, rng: &mut GapRng) -> bool {
    let (prev, next) = (x[t - 1], x[t + 1]);
    let Ar1StudentParams { mu, a, sigma, nu } = *params;
    let shrink = 1.0 + a * a;
    let mean = (mu + a * prev + a * (next - mu)) / shrink;
    let var = if nu > 2.0 { sigma * sigma * nu / (nu - 2.0) } else { sigma * sigma } / shrink;
    let sd = var.sqrt();
    let target = |v: f64| params.ln_innovation(params.residual(prev, v)) + params.ln_innovation(params.residual(v, next));
    let ln_q = |v: f64| -0.5 * (v - mean) * (v - mean) / var;
    let z: f64 = StandardNormal.sample(rng);
    let cand = mean + sd * z;
    let log_ratio = target(cand) - target(x[t]) + ln_q(x[t]) - ln_q(cand);
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        x[t] = cand;
        true
    } else {
        false
    }
}

/// Draw from the Gamma conditional of a scale-mixture weight given the
/// residual: shape `(ν+1)/2`, rate `(ν + e²/σ²)/2`.
fn draw_weight(e: f64, sigma: f64, nu: f64, rng: &mut GapRng) -> f64 {
    let z = e / sigma;
    let shape = 0.5 * (nu + 1.0);
    let rate = 0.5 * (nu + z * z);
    Gamma::new(shape, 1.0 / rate).unwrap().sample(rng).max(f64::MIN_POSITIVE)
}

/// Unconditional innovation draw `σ z / √τ`, `τ ~ Gamma(ν/2, rate ν/2)`.
fn draw_innovation(params: &Ar1StudentParams, rng: &mut GapRng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let tau = Gamma::new(0.5 * params.nu, 2.0 / params.nu).unwrap().sample(rng).max(f64::MIN_POSITIVE);
    params.sigma * z / tau.sqrt()
}

/// SAEM fit of the AR(1) Student-t model.
///
/// Each iteration runs Metropolis-within-Gibbs sweeps over the interior
/// missing points (target: the two adjacent transition densities), draws
/// the per-transition mixture weights from their Gamma conditional, blends
/// the weighted transition sums into the running statistics with step
/// `γ_k`, and solves the weighted least-squares M-step for `(μ, a, σ)`.
/// With `cfg.estimate_nu`, `ν` maximizes the running average of the
/// transition log-likelihood profile over [`nu_grid`]; otherwise it stays
/// at `init.nu`.
///
/// `cfg.e_step` must be SAEM. `cfg.max_iter` counts all iterations;
/// `cfg.tol` is unused because the chain runs to the end.
pub fn ar1t_fit_saem(y: &[f64], init: &Ar1StudentParams, cfg: &EmConfig, opts: &Ar1Options) -> Result<Ar1Fit> {
    cfg.validate()?;
    let EStep::Saem(schedule) = cfg.e_step else {
        return Err(Error::Unsupported("the AR(1) fitter requires the SAEM E-step"));
    };
    if cfg.max_iter <= schedule.burn_in {
        return Err(invalid("max_iter must exceed the SAEM burn-in"));
    }
    init.validate(opts.stationary)?;
    let (first, last) = check_series(y)?;
    let span = &y[first..=last];
    let missing: Vec<usize> = (0..span.len()).filter(|&t| span[t].is_nan()).collect();
    let long_gaps = interior_gaps(y).into_iter().filter(|g| g.1 > opts.max_gap).collect();
    let mut x = interpolate(span);
    let mut rng = cfg.seed.rng();
    let grid = nu_grid();
    let mut params = *init;
    let mut stats = Stats::default();
    let mut profile = alloc::vec![0.0; grid.len()];
    let mut chain = Vec::with_capacity(cfg.max_iter);
    let (mut accepted, mut proposed) = (0usize, 0usize);
    for k in 1..=cfg.max_iter {
        for _ in 0..opts.mh_sweeps {
            for &t in &missing {
                accepted += mh_site(&mut x, t, &params, &mut rng) as usize;
                proposed += 1;
            }
        }
        let mut fresh = Stats::default();
        for w in x.windows(2) {
            let tau = draw_weight(params.residual(w[0], w[1]), params.sigma, params.nu, &mut rng);
            fresh.add(w[0], w[1], tau);
        }
        let gamma = schedule.gamma(k);
        stats.blend(&fresh, gamma);
        let (mu, a, sigma) = stats.solve(opts.stationary).ok_or(Error::Singular("AR(1) design"))?;
        if !(sigma > 0.0) {
            return Err(Error::Diverged(alloc::format!("innovation scale collapsed at iteration {k}")));
        }
        params = Ar1StudentParams { mu, a, sigma, nu: params.nu };
        if cfg.estimate_nu {
            for (slot, &nu) in profile.iter_mut().zip(&grid) {
                let ll: f64 = x.windows(2).map(|w| ln_t(params.residual(w[0], w[1]), sigma, nu)).sum();
                *slot += gamma * (ll - *slot);
            }
            let best = (0..grid.len()).max_by(|&i, &j| profile[i].total_cmp(&profile[j])).unwrap();
            params.nu = grid[best];
        }
        chain.push(params);
    }
    let tail = &chain[schedule.burn_in..];
    let m = tail.len() as f64;
    let avg = |f: fn(&Ar1StudentParams) -> f64| tail.iter().map(f).sum::<f64>() / m;
    let params = Ar1StudentParams {
        mu: avg(|p| p.mu),
        a: avg(|p| p.a),
        sigma: avg(|p| p.sigma),
        nu: avg(|p| p.nu),
    };
    Ok(Ar1Fit {
        params,
        chain,
        acceptance: if proposed == 0 { 1.0 } else { accepted as f64 / proposed as f64 },
        long_gaps,
    })
}

/// Exact Gaussian draw of the gap `x[s..s+len]` given its observed
/// neighbours and the transition weights `tau[t]` (for the step into `t`).
/// The precision is tridiagonal; it is factored in place.
fn draw_gap_block(x: &mut [f64], s: usize, len: usize, tau: &[f64], params: &Ar1StudentParams, rng: &mut GapRng) {
    let Ar1StudentParams { mu, a, sigma, .. } = *params;
    let inv = 1.0 / (sigma * sigma);
    let (lo, hi) = (x[s - 1], x[s + len]);
    let mut diag = Vec::with_capacity(len);
    let mut off = Vec::with_capacity(len.saturating_sub(1));
    let mut rhs = Vec::with_capacity(len);
    for k in 0..len {
        let t = s + k;
        let (tin, tout) = (tau[t], tau[t + 1]);
        diag.push((tin + a * a * tout) * inv);
        let mut b = (tin * mu - a * tout * mu) * inv;
        if k == 0 {
            b += tin * a * lo * inv;
        }
        if k + 1 == len {
            b += a * tout * hi * inv;
        } else {
            off.push(-a * tout * inv);
        }
        rhs.push(b);
    }
    // Q = L Lᵀ with L lower bidiagonal: diagonal d, subdiagonal l.
    let mut d = Vec::with_capacity(len);
    let mut l = Vec::with_capacity(len.saturating_sub(1));
    for k in 0..len {
        let mut v = diag[k];
        if k > 0 {
            let lk: f64 = off[k - 1] / d[k - 1];
            l.push(lk);
            v -= lk * lk;
        }
        d.push(v.sqrt());
    }
    // mean = Q⁻¹ b; draw = mean + L⁻ᵀ z.
    let mut w = rhs;
    for k in 0..len {
        if k > 0 {
            w[k] -= l[k - 1] * w[k - 1];
        }
        w[k] /= d[k];
    }
    for k in 0..len {
        let z: f64 = StandardNormal.sample(rng);
        w[k] += z;
    }
    for k in (0..len).rev() {
        if k + 1 < len {
            w[k] -= l[k] * w[k + 1];
        }
        w[k] /= d[k];
    }
    x[s..s + len].copy_from_slice(&w);
}

/// One completion of `y` drawn from the model posterior.
///
/// Interior gaps run [`IMPUTE_BURN_IN`] data-augmentation Gibbs sweeps:
/// mixture weights given the path, then each gap block jointly given the
/// weights. Trailing gaps are forward simulations from the last
/// observation. Leading gaps are simulated backward from the first
/// observation: through the time-reversed stationary recursion when
/// `|a| < 1`, otherwise by inverting the recursion.
pub fn ar1t_impute_draw(y: &[f64], params: &Ar1StudentParams, seed: SeedSpec) -> Result<Vec<f64>> {
    params.validate(false)?;
    let (first, last) = check_series(y)?;
    let mut rng = seed.rng();
    let mut x = interpolate(y);
    let gaps = interior_gaps(y);
    if !gaps.is_empty() {
        let mut tau = alloc::vec![1.0; y.len()];
        for _ in 0..IMPUTE_BURN_IN {
            for &(s, len) in &gaps {
                for t in s..=s + len {
                    tau[t] = draw_weight(params.residual(x[t - 1], x[t]), params.sigma, params.nu, &mut rng);
                }
                draw_gap_block(&mut x, s, len, &tau, params, &mut rng);
            }
        }
    }
    for t in last + 1..y.len() {
        x[t] = params.mu + params.a * x[t - 1] + draw_innovation(params, &mut rng);
    }
    for t in (0..first).rev() {
        let e = draw_innovation(params, &mut rng);
        x[t] = if params.a.abs() < 1.0 {
            params.mu + params.a * x[t + 1] + e
        } else {
            (x[t + 1] - params.mu - e) / params.a
        };
    }
    for (out, &obs) in x.iter_mut().zip(y) {
        if !obs.is_nan() {
            *out = obs;
        }
    }
    Ok(x)
}

/// `draws` independent completions; draw `k` uses substream `k` of `seed`.
pub fn ar1t_multiple_impute(y: &[f64], params: &Ar1StudentParams, draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let base = SeedSpec::new(seed);
    (0..draws).map(|k| ar1t_impute_draw(y, params, base.substream(k as u64))).collect()
}
