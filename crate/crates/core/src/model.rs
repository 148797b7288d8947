//! Mean specifications shared by every volatility model, and the per-day
//! filter output they all produce.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeanModel {
    /// `x = a0 + a1 * sigma^2 + e`
    M1a,
    /// `x = a1 * sigma^2 + e`
    M1b,
    /// `x = a0 + a1 * sigma + e`
    M2a,
    /// `x = a1 * sigma + e`
    M2b,
    /// `x = a0 + e`
    M3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolRegressor {
    Variance,
    StdDev,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeanModelSpec {
    pub variant: MeanModel,
    pub uses_intercept: bool,
    pub vol_regressor: VolRegressor,
}

impl MeanModelSpec {
    pub const ALL: [MeanModel; 5] = [
        MeanModel::M1a,
        MeanModel::M1b,
        MeanModel::M2a,
        MeanModel::M2b,
        MeanModel::M3,
    ];

    pub fn new(variant: MeanModel) -> Self {
        let (uses_intercept, vol_regressor) = match variant {
            MeanModel::M1a => (true, VolRegressor::Variance),
            MeanModel::M1b => (false, VolRegressor::Variance),
            MeanModel::M2a => (true, VolRegressor::StdDev),
            MeanModel::M2b => (false, VolRegressor::StdDev),
            MeanModel::M3 => (true, VolRegressor::None),
        };
        Self {
            variant,
            uses_intercept,
            vol_regressor,
        }
    }

    pub fn uses_slope(&self) -> bool {
        self.vol_regressor != VolRegressor::None
    }

    /// Number of free mean coefficients (1 or 2).
    pub fn n_coefficients(&self) -> usize {
        self.uses_intercept as usize + self.uses_slope() as usize
    }

    /// Volatility regressor value for a conditional standard deviation.
    #[inline]
    pub fn vol_term(&self, sigma: f64) -> f64 {
        match self.vol_regressor {
            VolRegressor::Variance => sigma * sigma,
            VolRegressor::StdDev => sigma,
            VolRegressor::None => 0.0,
        }
    }

    /// Regressor vector for the free coefficients, in the order
    /// (intercept, slope) with absent terms dropped. Unused slots are zero.
    #[inline]
    pub fn regressors(&self, sigma: f64) -> [f64; 2] {
        match (self.uses_intercept, self.uses_slope()) {
            (true, true) => [1.0, self.vol_term(sigma)],
            (true, false) => [1.0, 0.0],
            (false, true) => [self.vol_term(sigma), 0.0],
            (false, false) => unreachable!("every mean model has a coefficient"),
        }
    }

    /// Conditional mean given the full (alpha0, alpha1) pair; coefficients
    /// the model does not use are ignored.
    #[inline]
    pub fn mean(&self, alpha0: f64, alpha1: f64, sigma: f64) -> f64 {
        let a0 = if self.uses_intercept { alpha0 } else { 0.0 };
        let a1 = if self.uses_slope() { alpha1 } else { 0.0 };
        a0 + a1 * self.vol_term(sigma)
    }

    /// Names of the free coefficients, matching `regressors` order.
    pub fn coefficient_names(&self) -> Vec<&'static str> {
        let mut names = Vec::with_capacity(2);
        if self.uses_intercept {
            names.push("alpha0");
        }
        if self.uses_slope() {
            names.push("alpha1");
        }
        names
    }

    /// Short label as used on the command line ("1a", "3", ...).
    pub fn label(&self) -> &'static str {
        match self.variant {
            MeanModel::M1a => "1a",
            MeanModel::M1b => "1b",
            MeanModel::M2a => "2a",
            MeanModel::M2b => "2b",
            MeanModel::M3 => "3",
        }
    }
}

impl fmt::Display for MeanModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MeanModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.trim_start_matches('m');
        let variant = match s {
            "1a" => MeanModel::M1a,
            "1b" => MeanModel::M1b,
            "2a" => MeanModel::M2a,
            "2b" => MeanModel::M2b,
            "3" => MeanModel::M3,
            other => {
                return Err(Error::InvalidParams(format!(
                    "unknown mean model '{other}' (expected 1a, 1b, 2a, 2b or 3)"
                )))
            }
        };
        Ok(Self::new(variant))
    }
}

/// Point estimate of a mean coefficient with its uncertainty, when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
}

impl MeanEstimate {
    pub fn t_stat(&self) -> Option<f64> {
        self.std_error
            .filter(|se| *se > 0.0)
            .map(|se| self.estimate / se)
    }
}

/// Per-day output of any of the volatility filters.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// Conditional mean, percent.
    pub mu: Vec<f64>,
    /// Conditional standard deviation, percent.
    pub sigma: Vec<f64>,
    /// Volatility innovation, percent.
    pub shock: Vec<f64>,
    /// Total log-likelihood, nats.
    pub loglik: f64,
    /// `(x_t - mu_t) / sigma_t`.
    pub std_residuals: Vec<f64>,
    pub mean_estimates: Vec<MeanEstimate>,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Observed series implied by the stored fields.
    pub fn reconstruct_observations(&self) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(&self.std_residuals)
            .map(|((m, s), r)| m + s * r)
            .collect()
    }

    pub(crate) fn check_lengths(&self) -> Result<()> {
        let n = self.sigma.len();
        for len in [self.mu.len(), self.shock.len(), self.std_residuals.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        Ok(())
    }
}
