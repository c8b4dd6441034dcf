//! Cumulative link functions.
//!
//! Only the inverse link `γ = g⁻¹(η)` and its derivative are exposed; the
//! design algorithms never need the forward link.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};

/// Floor and ceiling applied to every cumulative probability.
pub const PROB_EPS: f64 = 1e-12;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    Logit,
    Probit,
    #[serde(rename = "loglog")]
    LogLog,
    #[serde(rename = "cloglog")]
    CLogLog,
    Cauchit,
}

impl LinkFunction {
    pub const ALL: [LinkFunction; 5] = [
        LinkFunction::Logit,
        LinkFunction::Probit,
        LinkFunction::LogLog,
        LinkFunction::CLogLog,
        LinkFunction::Cauchit,
    ];

    pub fn key(self) -> &'static str {
        match self {
            LinkFunction::Logit => "logit",
            LinkFunction::Probit => "probit",
            LinkFunction::LogLog => "loglog",
            LinkFunction::CLogLog => "cloglog",
            LinkFunction::Cauchit => "cauchit",
        }
    }

    /// `g⁻¹(η)` clamped to `[1e-12, 1 - 1e-12]`.
    pub fn inverse_link(self, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(DesignError::NonFinite(eta));
        }
        Ok(self.cdf_unclamped(eta).clamp(PROB_EPS, 1.0 - PROB_EPS))
    }

    /// `(g⁻¹)'(η)`, floored at the smallest positive normal so it stays > 0.
    pub fn inverse_link_derivative(self, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(DesignError::NonFinite(eta));
        }
        Ok(self.density_unclamped(eta).max(f64::MIN_POSITIVE))
    }

    /// The raw cumulative probability, before clamping.
    pub fn cdf_unclamped(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let t = eta.exp();
                    t / (1.0 + t)
                }
            }
            LinkFunction::Probit if eta > 0.0 => 1.0 - 0.5 * libm::erfc(eta * FRAC_1_SQRT_2),
            LinkFunction::Probit => 0.5 * libm::erfc(-eta * FRAC_1_SQRT_2),
            LinkFunction::LogLog => (-(-eta).exp()).exp(),
            // 1 - exp(-e^η) without cancellation for η → -∞
            LinkFunction::CLogLog => -(-eta.exp()).exp_m1(),
            LinkFunction::Cauchit => {
                if eta < 0.0 {
                    // 1/2 + atan(η)/π = atan(-1/η)/π for η < 0
                    (-1.0 / eta).atan() / PI
                } else {
                    0.5 + eta.atan() / PI
                }
            }
        }
    }

    /// The raw upper tail `1 − g⁻¹(η)`, formed without subtracting from one.
    pub fn survival_unclamped(self, eta: f64) -> f64 {
        match self {
            LinkFunction::CLogLog => (-eta.exp()).exp(),
            LinkFunction::LogLog => -(-(-eta).exp()).exp_m1(),
            _ => self.cdf_unclamped(-eta),
        }
    }

    fn density_unclamped(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Logit => {
                let t = (-eta.abs()).exp();
                t / ((1.0 + t) * (1.0 + t))
            }
            LinkFunction::Probit => INV_SQRT_2PI * (-0.5 * eta * eta).exp(),
            LinkFunction::LogLog => (-eta - (-eta).exp()).exp(),
            LinkFunction::CLogLog => (eta - eta.exp()).exp(),
            LinkFunction::Cauchit => 1.0 / (PI * (1.0 + eta * eta)),
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for LinkFunction {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(LinkFunction::Logit),
            "probit" => Ok(LinkFunction::Probit),
            "loglog" => Ok(LinkFunction::LogLog),
            "cloglog" => Ok(LinkFunction::CLogLog),
            "cauchit" => Ok(LinkFunction::Cauchit),
            other => Err(DesignError::UnknownLink(other.to_string())),
        }
    }
}
