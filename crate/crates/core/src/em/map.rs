use nalgebra::DVector;

use crate::error::{invalid, Error, Result};
use crate::optim::{bfgs_minimize, BfgsOptions};

/// Outcome of a penalized M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStep {
    pub theta: DVector<f64>,
    /// `Q + log prior` at `theta`.
    pub value: f64,
    /// `Q + log prior` at the previous iterate.
    pub start_value: f64,
}

/// MAP M-step: maximizes `Q(θ | θ_k) + log f(θ)`.
///
/// `q_argmax` is the unpenalized maximizer of `Q`, used as an alternative
/// starting point. The search uses BFGS from the better of `theta_k` and
/// `q_argmax`; a prior of `−∞` marks infeasible parameters. The result
/// never has a lower objective than `theta_k`.
pub fn map_m_step(
    q: impl Fn(&DVector<f64>) -> f64,
    q_argmax: &DVector<f64>,
    log_prior: impl Fn(&DVector<f64>) -> f64,
    theta_k: &DVector<f64>,
) -> Result<MapStep> {
    if q_argmax.len() != theta_k.len() {
        return Err(Error::Shape {
            expected: (theta_k.len(), 1),
            found: (q_argmax.len(), 1),
        });
    }
    let objective = |t: &DVector<f64>| {
        let lp = log_prior(t);
        if lp == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        q(t) + lp
    };
    let start_value = objective(theta_k);
    if !start_value.is_finite() {
        return Err(invalid("log prior and Q must be finite at the current iterate"));
    }
    let at_argmax = objective(q_argmax);
    let x0 = if at_argmax.is_finite() && at_argmax > start_value {
        q_argmax
    } else {
        theta_k
    };
    let neg = |t: &DVector<f64>| {
        let v = objective(t);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let res = bfgs_minimize(neg, x0, BfgsOptions::default());
    let value = -res.value;
    if !(value >= start_value) {
        return Err(Error::AscentFailure("MAP M-step decreased the penalized objective"));
    }
    Ok(MapStep {
        theta: res.x,
        value,
        start_value,
    })
}
