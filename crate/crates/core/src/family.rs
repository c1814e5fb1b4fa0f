//! Quasi-likelihood families: link, variance, loss and the derivatives the
//! IRLS solver needs.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::GacmError;

/// Logit means are kept at least this far from 0 and 1.
pub const MEAN_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Binary response, canonical logit link, `V(mu) = mu (1 - mu)`.
    BernoulliLogit,
    /// Continuous response, identity link, `V(mu) = 1`.
    GaussianIdentity,
}

impl Family {
    pub fn is_canonical(self) -> bool {
        true
    }

    /// Inverse link `g^{-1}(eta)`.
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::BernoulliLogit => {
                let mu = if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                };
                mu.clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP)
            }
            Family::GaussianIdentity => eta,
        }
    }

    /// Derivative of the inverse link, `d mu / d eta`.
    pub fn mean_deriv(self, eta: f64) -> f64 {
        match self {
            Family::BernoulliLogit => {
                let mu = self.mean(eta);
                mu * (1.0 - mu)
            }
            Family::GaussianIdentity => 1.0,
        }
    }

    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::BernoulliLogit => mu * (1.0 - mu),
            Family::GaussianIdentity => 1.0,
        }
    }

    /// Whether `y` lies in the response support.
    pub fn valid_response(self, y: f64) -> bool {
        match self {
            Family::BernoulliLogit => (0.0..=1.0).contains(&y),
            Family::GaussianIdentity => y.is_finite(),
        }
    }

    /// First derivative of the loss in `eta` and the Fisher weight.
    ///
    /// `q1 = -(y - mu) rho_1(eta)`, `w = rho_2(eta) = mu'(eta)^2 / V(mu)`.
    pub fn q_derivs(self, eta: f64, y: f64) -> (f64, f64) {
        let mu = self.mean(eta);
        let d = self.mean_deriv(eta);
        let v = self.variance(mu);
        let q1 = -(y - mu) * d / v;
        (q1, d * d / v)
    }

    /// Negative quasi-likelihood `Q(mu, y)`, normalized so that `Q(y, y) = 0`.
    pub fn q_loss(self, mu: f64, y: f64) -> f64 {
        match self {
            Family::BernoulliLogit => {
                let mu = mu.clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP);
                xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu))
            }
            Family::GaussianIdentity => 0.5 * (y - mu) * (y - mu),
        }
    }

    /// Loss as a function of the linear predictor.
    pub fn loss_at_eta(self, eta: f64, y: f64) -> f64 {
        self.q_loss(self.mean(eta), y)
    }
}

/// `a * ln(b)` with `0 * ln(.) = 0`.
fn xlogy(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::BernoulliLogit => write!(f, "bernoulli-logit"),
            Family::GaussianIdentity => write!(f, "gaussian-identity"),
        }
    }
}

impl FromStr for Family {
    type Err = GacmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logit" | "binomial" | "bernoulli" | "bernoulli-logit" => Ok(Family::BernoulliLogit),
            "gaussian" | "identity" | "gaussian-identity" => Ok(Family::GaussianIdentity),
            other => Err(GacmError::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}
