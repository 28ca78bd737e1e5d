//! Quantile check loss and the empirical quantile risk.

use nalgebra::DVector;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize, JsonSchema)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub const MEDIAN: QuantileLevel = QuantileLevel(0.5);

    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::invalid("tau", format!("must lie in (0, 1), got {tau}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

/// `u (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: QuantileLevel) -> f64 {
    if u < 0.0 {
        (tau.0 - 1.0) * u
    } else {
        tau.0 * u
    }
}

/// `y - X beta`, plus an optional constant offset subtracted from every row.
pub fn residuals(beta: &[f64], intercept: f64, d: &Dataset) -> Result<DVector<f64>> {
    if beta.len() != d.p() {
        return Err(Error::dims("coefficient vector", d.p(), beta.len()));
    }
    let b = DVector::from_column_slice(beta);
    let mut r = d.y() - d.x() * b;
    if intercept != 0.0 {
        r.add_scalar_mut(-intercept);
    }
    Ok(r)
}

/// Mean check loss of the residuals.
pub fn mean_check_loss(r: &DVector<f64>, tau: QuantileLevel) -> f64 {
    r.iter().map(|&u| check_loss(u, tau)).sum::<f64>() / r.len() as f64
}

/// Empirical quantile risk `(1/n) sum_i rho_tau(y_i - x_i' beta)`.
pub fn qr_risk(beta: &[f64], d: &Dataset, tau: QuantileLevel) -> Result<f64> {
    Ok(mean_check_loss(&residuals(beta, 0.0, d)?, tau))
}

/// Proximal map of `sigma * rho_tau`: `argmin_u sigma rho_tau(u) + (u - v)^2 / 2`.
#[inline]
pub fn prox_check(v: f64, sigma: f64, tau: QuantileLevel) -> f64 {
    let upper = sigma * tau.0;
    let lower = -sigma * (1.0 - tau.0);
    if v > upper {
        v - upper
    } else if v < lower {
        v - lower
    } else {
        0.0
    }
}
