use core::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::special::{ln_bessel_k, ln_gamma};

/// Density generator `g` of an elliptical law: the density of `x` is
/// `det(Σ)^{-1/2} g((x−μ)ᵀ Σ⁻¹ (x−μ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityGenerator {
    Gaussian,
    StudentT { nu: f64 },
    /// Shape `s` and scale `b`.
    GeneralizedGaussian { s: f64, b: f64 },
    KDistribution { nu: f64 },
}

impl DensityGenerator {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gaussian => true,
            Self::StudentT { nu } | Self::KDistribution { nu } => nu > 0.0 && nu.is_finite(),
            Self::GeneralizedGaussian { s, b } => s > 0.0 && b > 0.0 && s.is_finite() && b.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("density generator parameters must be positive and finite"))
        }
    }

    /// `ln g(r)` in dimension `dim`, for `r ≥ 0`.
    pub fn ln_g(&self, r: f64, dim: usize) -> f64 {
        let n = dim as f64;
        match *self {
            Self::Gaussian => -0.5 * r - 0.5 * n * (2.0 * PI).ln(),
            Self::StudentT { nu } => {
                ln_gamma(0.5 * (nu + n)) - ln_gamma(0.5 * nu) - 0.5 * n * (nu * PI).ln()
                    - 0.5 * (n + nu) * (r / nu).ln_1p()
            }
            Self::GeneralizedGaussian { s, b } => {
                s.ln() - r.powf(s) / (2f64.powf(s) * b) + ln_gamma(0.5 * n)
                    - 0.5 * n * (2.0 * PI).ln()
                    - n / (2.0 * s) * b.ln()
                    - ln_gamma(n / (2.0 * s))
            }
            Self::KDistribution { nu } => {
                let order = nu - 0.5 * n;
                let norm = 0.5 * n * nu.ln() - (nu - 1.0) * core::f64::consts::LN_2 - 0.5 * n * PI.ln() - ln_gamma(nu);
                if r == 0.0 {
                    // z^a K_a(z) → 2^{a−1} Γ(a) as z → 0 (a > 0)
                    if order > 0.0 {
                        let a = order;
                        return norm + (a - 1.0) * core::f64::consts::LN_2 + ln_gamma(a);
                    }
                    return f64::INFINITY;
                }
                let z = (2.0 * nu * r).sqrt();
                norm + 0.5 * order * (2.0 * nu * r).ln() + ln_bessel_k(order, z)
            }
        }
    }

    /// `g(r)` in dimension `dim`.
    pub fn g(&self, r: f64, dim: usize) -> f64 {
        self.ln_g(r, dim).exp()
    }
}
