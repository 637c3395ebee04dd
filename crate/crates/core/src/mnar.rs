//! Joint estimation of data and mechanism parameters under a self-masked
//! MNAR selection model, by stochastic EM.
//!
//! Data model: entries of row `i` are independent `N(μ_i, σ_i²)`.
//! Mask model: `P(M_ij = 1 | X_ij = x) = h(x) = sigmoid(φ1 x + φ0)`, with
//! one `(φ0, φ1)` shared by all entries. Other observation laws `h` would
//! enter through [`Phi::observe_prob`] and the mechanism update.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::IncompleteMatrix;
use crate::error::{invalid, Error, Result};
use crate::rng::{GapRng, SeedSpec};
use crate::special::sigmoid;

/// Logistic self-mask parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phi {
    pub phi0: f64,
    pub phi1: f64,
}

impl Phi {
    pub fn new(phi0: f64, phi1: f64) -> Self {
        Self { phi0, phi1 }
    }

    /// `h(x) = P(observed | x)`.
    pub fn observe_prob(&self, x: f64) -> f64 {
        sigmoid(self.phi1 * x + self.phi0)
    }

    /// `ln(1 − h(x))`, accurate in the tails.
    fn ln_miss_prob(&self, x: f64) -> f64 {
        let t = self.phi1 * x + self.phi0;
        // ln(1 − sigmoid(t)) = −softplus(t)
        -(if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() })
    }
}

/// Per-row Gaussian parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGaussian {
    pub mu: DVector<f64>,
    pub sigma: DVector<f64>,
}

/// A draw from the tilted law, with a flag for the grid fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedDraw {
    pub value: f64,
    pub used_fallback: bool,
}

const REJECTION_BUDGET: usize = 10_000;
const GRID_POINTS: usize = 64;
const GRID_HALF_WIDTH: f64 = 8.0;

/// One draw from the density proportional to `N(x; μ, σ²)(1 − h(x))`, the
/// law of an entry given that it is missing.
///
/// Rejection sampling from `N(μ, σ²)` with acceptance probability `1 − h`;
/// after 10⁴ rejections, inverse-CDF sampling on a 64-point grid over
/// `μ ± 8σ`.
pub fn sample_missing_entry(mu: f64, sigma: f64, phi: Phi, rng: &mut GapRng) -> Result<TiltedDraw> {
    if !(sigma > 0.0) || !mu.is_finite() {
        return Err(invalid("entry law needs finite mean and positive deviation"));
    }
    let normal = Normal::new(mu, sigma).map_err(|_| invalid("entry law"))?;
    for _ in 0..REJECTION_BUDGET {
        let x: f64 = normal.sample(rng);
        let u: f64 = rng.random();
        if u < 1.0 - phi.observe_prob(x) {
            return Ok(TiltedDraw {
                value: x,
                used_fallback: false,
            });
        }
    }
    grid_draw(mu, sigma, phi, rng).map(|value| TiltedDraw {
        value,
        used_fallback: true,
    })
}

fn grid_draw(mu: f64, sigma: f64, phi: Phi, rng: &mut GapRng) -> Result<f64> {
    let h = 2.0 * GRID_HALF_WIDTH * sigma / GRID_POINTS as f64;
    let centers: Vec<f64> = (0..GRID_POINTS)
        .map(|k| mu - GRID_HALF_WIDTH * sigma + (k as f64 + 0.5) * h)
        .collect();
    let logw: Vec<f64> = centers
        .iter()
        .map(|&x| -0.5 * ((x - mu) / sigma).powi(2) + phi.ln_miss_prob(x))
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::SamplerFailure {
            attempts: REJECTION_BUDGET,
        });
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, wk) in w.iter().enumerate() {
        if u < *wk || k + 1 == GRID_POINTS {
            let jitter: f64 = rng.random::<f64>() - 0.5;
            return Ok(centers[k] + jitter * h);
        }
        u -= wk;
    }
    unreachable!("grid weights sum to total")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemConfig {
    pub iters: usize,
    pub burn_in: usize,
    pub seed: SeedSpec,
    /// Hold the mechanism slope at this value instead of estimating it.
    pub fixed_slope: Option<f64>,
    /// Newton iterations per mechanism update.
    pub newton_steps: usize,
}

impl Default for SemConfig {
    fn default() -> Self {
        Self {
            iters: 600,
            burn_in: 300,
            seed: SeedSpec::default(),
            fixed_slope: None,
            newton_steps: 25,
        }
    }
}

/// One state of the SEM chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SemState {
    pub theta: RowGaussian,
    pub phi: Phi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemFit {
    /// Averages over the post-burn-in iterations.
    pub theta: RowGaussian,
    pub phi: Phi,
    /// State after each iteration.
    pub chain: Vec<SemState>,
    /// Iterations where the mechanism update was skipped because the
    /// logistic fit is separated.
    pub separation_warnings: usize,
    /// Draws that needed the grid sampler.
    pub fallback_draws: usize,
}

const DIVERGENCE_BOUND: f64 = 1e6;

/// Stochastic EM for the selection model.
///
/// Each iteration draws every missing entry from its tilted conditional,
/// sets `θ` to the per-row mean and (1/n) standard deviation of the
/// completed rows, and refits `φ` by Newton's method on the logistic
/// likelihood of the mask given the completed values.
pub fn sem_selection_fit(x: &IncompleteMatrix, init_theta: &RowGaussian, init_phi: Phi, cfg: &SemConfig) -> Result<SemFit> {
    let (p, n) = x.shape();
    if cfg.iters <= cfg.burn_in {
        return Err(invalid("iters must exceed burn_in"));
    }
    if init_theta.mu.len() != p || init_theta.sigma.len() != p {
        return Err(Error::Shape {
            expected: (p, 1),
            found: (init_theta.mu.len(), 1),
        });
    }
    if init_theta.sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid("row deviations must be positive"));
    }
    for i in 0..p {
        if x.mask().row_observed_count(i) < 2 {
            return Err(Error::InsufficientData(alloc::format!("row {i} has fewer than 2 observed entries")));
        }
    }
    let mut rng = cfg.seed.rng();
    let mut theta = init_theta.clone();
    let mut phi = match cfg.fixed_slope {
        Some(s) => Phi::new(init_phi.phi0, s),
        None => init_phi,
    };
    let mut completed = x.filled_with(0.0);
    let mut chain = Vec::with_capacity(cfg.iters);
    let mut separation_warnings = 0;
    let mut fallback_draws = 0;
    for _ in 0..cfg.iters {
        for j in 0..n {
            for i in 0..p {
                if !x.is_observed(i, j) {
                    let d = sample_missing_entry(theta.mu[i], theta.sigma[i], phi, &mut rng)?;
                    fallback_draws += d.used_fallback as usize;
                    completed[(i, j)] = d.value;
                }
            }
        }
        for i in 0..p {
            let row = completed.row(i);
            let m = row.sum() / n as f64;
            let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64;
            theta.mu[i] = m;
            theta.sigma[i] = v.sqrt().max(f64::MIN_POSITIVE);
        }
        match fit_logistic(&completed, x, phi, cfg.fixed_slope, cfg.newton_steps) {
            Some(next) => phi = next,
            None => separation_warnings += 1,
        }
        let state = SemState { theta: theta.clone(), phi };
        let too_big = state.theta.mu.iter().chain(state.theta.sigma.iter()).chain([phi.phi0, phi.phi1].iter())
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND);
        if too_big {
            return Err(Error::Diverged("selection-model chain left the bounded region".into()));
        }
        chain.push(state);
    }
    let tail = &chain[cfg.burn_in..];
    let k = tail.len() as f64;
    let mut mu = DVector::zeros(p);
    let mut sigma = DVector::zeros(p);
    let (mut phi0, mut phi1) = (0.0, 0.0);
    for s in tail {
        mu += &s.theta.mu;
        sigma += &s.theta.sigma;
        phi0 += s.phi.phi0;
        phi1 += s.phi.phi1;
    }
    Ok(SemFit {
        theta: RowGaussian {
            mu: mu / k,
            sigma: sigma / k,
        },
        phi: Phi::new(phi0 / k, phi1 / k),
        chain,
        separation_warnings,
        fallback_draws,
    })
}

/// Newton's method for the logistic regression of the mask on the completed
/// values. Returns `None` when the response is constant or the fit runs off
/// to infinity (separation).
fn fit_logistic(
    z: &nalgebra::DMatrix<f64>,
    x: &IncompleteMatrix,
    start: Phi,
    fixed_slope: Option<f64>,
    steps: usize,
) -> Option<Phi> {
    let observed = x.mask().count_observed();
    if observed == 0 || observed == z.len() {
        return None;
    }
    let (p, n) = z.shape();
    let mut b0 = start.phi0;
    let mut b1 = fixed_slope.unwrap_or(start.phi1);
    for _ in 0..steps {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..n {
            for i in 0..p {
                let v = z[(i, j)];
                let y = x.is_observed(i, j) as u8 as f64;
                let pr = sigmoid(b0 + b1 * v);
                let w = pr * (1.0 - pr);
                g0 += y - pr;
                g1 += (y - pr) * v;
                h00 += w;
                h01 += w * v;
                h11 += w * v * v;
            }
        }
        let (d0, d1) = if fixed_slope.is_some() {
            if h00 <= 0.0 {
                return None;
            }
            (g0 / h00, 0.0)
        } else {
            let det = h00 * h11 - h01 * h01;
            if !(det > 1e-12 * (h00 * h11).max(f64::MIN_POSITIVE)) {
                return None;
            }
            ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det)
        };
        b0 += d0;
        b1 += d1;
        if !b0.is_finite() || !b1.is_finite() || b0.abs() > 1e3 || b1.abs() > 1e3 {
            return None;
        }
        if d0.abs().max(d1.abs()) < 1e-10 {
            break;
        }
    }
    Some(Phi::new(b0, b1))
}
