//! Asymmetric (GJR-type) GARCH-in-mean filtering and maximum likelihood.
//!
//! Conditional variance:
//!
//! ```text
//! s2[t] = z0 + z1 e[t-1]^2 + z2 e[t-1]^2 1{e[t-1] < 0} + z3 s2[t-1]
//! ```
//!
//! with the conditional mean given by the chosen [`MeanModelSpec`]. The
//! variance on day `t` is known at the close of day `t-1`, so the volatility
//! news revealed by day `t`'s return is the revision of `s[t+1]` against
//! its expectation before the return was observed; that revision is what
//! [`FilterOutput::shock`] holds for this model.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FilterOutput, MeanEstimate, MeanModelSpec, VolRegressor};
use crate::optim::{self, BfgsOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    /// Variance level, percent^2.
    pub zeta0: f64,
    /// ARCH weight.
    pub zeta1: f64,
    /// Extra weight on negative shocks.
    pub zeta2: f64,
    /// Persistence of the previous variance.
    pub zeta3: f64,
    /// Mean intercept, percent.
    pub alpha0: f64,
    /// Mean-volatility slope.
    pub alpha1: f64,
}

impl GarchParams {
    pub const NAMES: [&'static str; 6] = ["zeta0", "zeta1", "zeta2", "zeta3", "alpha0", "alpha1"];

    /// `zeta1 + zeta2 / 2 + zeta3`; must stay below one.
    pub fn persistence(&self) -> f64 {
        self.zeta1 + 0.5 * self.zeta2 + self.zeta3
    }

    /// Unconditional variance of the innovations.
    pub fn unconditional_variance(&self) -> f64 {
        self.zeta0 / (1.0 - self.persistence())
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.zeta0 > 0.0
            && self.zeta1 >= 0.0
            && self.zeta1 + self.zeta2 >= 0.0
            && self.zeta3 >= 0.0
            && self.persistence() < 1.0
            && self.alpha0.is_finite()
            && self.alpha1.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("GARCH parameters violate constraints: {self:?}")))
        }
    }

    fn to_raw(self) -> [f64; 6] {
        [self.zeta0, self.zeta1, self.zeta2, self.zeta3, self.alpha0, self.alpha1]
    }

    fn from_raw(r: &[f64; 6]) -> Self {
        Self {
            zeta0: r[0],
            zeta1: r[1],
            zeta2: r[2],
            zeta3: r[3],
            alpha0: r[4],
            alpha1: r[5],
        }
    }
}

/// Sample variance of the first (up to) 50 observations.
pub fn initial_variance(x: &[f64]) -> f64 {
    let head = &x[..x.len().min(50)];
    let n = head.len() as f64;
    let mean = head.iter().sum::<f64>() / n;
    let v = head.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

#[inline]
fn vol_term_and_slope(spec: &MeanModelSpec, s2: f64) -> (f64, f64) {
    match spec.vol_regressor {
        VolRegressor::Variance => (s2, 1.0),
        VolRegressor::StdDev => {
            let s = s2.sqrt();
            (s, 0.5 / s)
        }
        VolRegressor::None => (0.0, 0.0),
    }
}

/// Run the variance recursion.
pub fn garch_filter(x: &[f64], params: &GarchParams, spec: &MeanModelSpec, sigma2_init: f64) -> Result<FilterOutput> {
    params.validate()?;
    if sigma2_init <= 0.0 || !sigma2_init.is_finite() {
        return Err(Error::InvalidParams(format!("initial variance must be positive, got {sigma2_init}")));
    }
    let n = x.len();
    let mut out = FilterOutput {
        mu: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
        shock: Vec::with_capacity(n),
        loglik: 0.0,
        std_residuals: Vec::with_capacity(n),
        mean_estimates: Vec::new(),
    };
    let mut s2 = sigma2_init;
    let p = params.persistence();
    for (t, &xt) in x.iter().enumerate() {
        let sigma = s2.sqrt();
        let mu = spec.mean(params.alpha0, params.alpha1, sigma);
        let e = xt - mu;
        let ll = -0.5 * (LN_2PI + s2.ln() + e * e / s2);
        if !ll.is_finite() || !(s2 > 0.0) {
            return Err(Error::NonFiniteLikelihood { index: t });
        }
        out.loglik += ll;
        out.mu.push(mu);
        out.sigma.push(sigma);
        out.std_residuals.push(e / sigma);
        let arch = params.zeta1 + if e < 0.0 { params.zeta2 } else { 0.0 };
        let next = params.zeta0 + arch * e * e + params.zeta3 * s2;
        let expected = params.zeta0 + p * s2;
        out.shock.push(next.sqrt() - expected.sqrt());
        s2 = next;
    }
    out.mean_estimates = spec
        .coefficient_names()
        .into_iter()
        .map(|name| MeanEstimate {
            name: name.to_string(),
            estimate: if name == "alpha0" { params.alpha0 } else { params.alpha1 },
            std_error: None,
        })
        .collect();
    Ok(out)
}

/// Log-likelihood and its gradient with respect to the raw parameter
/// vector `(z0, z1, z2, z3, a0, a1)`. No constraint checks: returns `None`
/// if the recursion leaves the positive reals or overflows.
fn loglik_grad(x: &[f64], raw: &[f64; 6], spec: &MeanModelSpec, s2_init: f64) -> Option<(f64, [f64; 6])> {
    let [z0, z1, z2, z3, a0, a1] = *raw;
    let a0 = if spec.uses_intercept { a0 } else { 0.0 };
    let a1 = if spec.uses_slope() { a1 } else { 0.0 };
    let mut s2 = s2_init;
    let mut ds2 = [0.0f64; 6];
    let mut ll = 0.0;
    let mut grad = [0.0f64; 6];
    for &xt in x {
        if !(s2 > 0.0) || !s2.is_finite() {
            return None;
        }
        let (g, dg) = vol_term_and_slope(spec, s2);
        let e = xt - a0 - a1 * g;
        let mut de = [0.0f64; 6];
        for k in 0..6 {
            de[k] = -a1 * dg * ds2[k];
        }
        if spec.uses_intercept {
            de[4] -= 1.0;
        }
        if spec.uses_slope() {
            de[5] -= g;
        }
        let inv = 1.0 / s2;
        ll += -0.5 * (LN_2PI + s2.ln() + e * e * inv);
        let coef_s2 = -0.5 * inv + 0.5 * e * e * inv * inv;
        for k in 0..6 {
            grad[k] += coef_s2 * ds2[k] - e * inv * de[k];
        }
        let neg = e < 0.0;
        let arch = z1 + if neg { z2 } else { 0.0 };
        let e2 = e * e;
        let mut next_ds2 = [0.0f64; 6];
        for k in 0..6 {
            next_ds2[k] = 2.0 * arch * e * de[k] + z3 * ds2[k];
        }
        next_ds2[0] += 1.0;
        next_ds2[1] += e2;
        if neg {
            next_ds2[2] += e2;
        }
        next_ds2[3] += s2;
        s2 = z0 + arch * e2 + z3 * s2;
        ds2 = next_ds2;
    }
    if ll.is_finite() {
        Some((ll, grad))
    } else {
        None
    }
}

/// Unconstrained coordinates: `ln z0`, three logits of the stationarity
/// simplex `(z1/2, (z1+z2)/2, z3, slack)`, then the active mean coefficients.
#[derive(Debug, Clone, Copy)]
struct Transform {
    spec: MeanModelSpec,
}

impl Transform {
    fn dim(&self) -> usize {
        4 + self.spec.n_coefficients()
    }

    fn alpha_slots(&self) -> Vec<usize> {
        let mut slots = Vec::new();
        if self.spec.uses_intercept {
            slots.push(4);
        }
        if self.spec.uses_slope() {
            slots.push(5);
        }
        slots
    }

    fn to_theta(&self, p: &GarchParams) -> DVector<f64> {
        let floor = 1e-8;
        let u1 = (0.5 * p.zeta1).max(floor);
        let u2 = (0.5 * (p.zeta1 + p.zeta2)).max(floor);
        let u3 = p.zeta3.max(floor);
        let slack = (1.0 - u1 - u2 - u3).max(floor);
        let raw = p.to_raw();
        let mut th = vec![p.zeta0.ln(), (u1 / slack).ln(), (u2 / slack).ln(), (u3 / slack).ln()];
        th.extend(self.alpha_slots().into_iter().map(|k| raw[k]));
        DVector::from_vec(th)
    }

    /// Raw parameters and the Jacobian d raw / d theta (6 x dim).
    fn to_raw(&self, th: &DVector<f64>) -> ([f64; 6], DMatrix<f64>) {
        let e = [th[1].exp(), th[2].exp(), th[3].exp()];
        let denom = 1.0 + e[0] + e[1] + e[2];
        let u = [e[0] / denom, e[1] / denom, e[2] / denom];
        let mut raw = [0.0; 6];
        raw[0] = th[0].exp();
        raw[1] = 2.0 * u[0];
        raw[2] = 2.0 * (u[1] - u[0]);
        raw[3] = u[2];
        let mut jac = DMatrix::zeros(6, self.dim());
        jac[(0, 0)] = raw[0];
        for j in 0..3 {
            let du = |k: usize| u[k] * (if k == j { 1.0 } else { 0.0 } - u[j]);
            jac[(1, j + 1)] = 2.0 * du(0);
            jac[(2, j + 1)] = 2.0 * (du(1) - du(0));
            jac[(3, j + 1)] = du(2);
        }
        for (i, k) in self.alpha_slots().into_iter().enumerate() {
            raw[k] = th[4 + i];
            jac[(k, 4 + i)] = 1.0;
        }
        (raw, jac)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GarchFitOptions {
    /// Initial variance; defaults to [`initial_variance`] of the data.
    pub sigma2_init: Option<f64>,
    pub optimizer: BfgsOptions,
    /// Relative step for the numerical Hessian.
    pub hessian_step: f64,
}

impl Default for GarchFitOptions {
    fn default() -> Self {
        Self {
            sigma2_init: None,
            optimizer: BfgsOptions::default(),
            hessian_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GarchFit {
    pub params: GarchParams,
    pub output: FilterOutput,
    /// Names of the estimated parameters, in covariance order.
    pub names: Vec<&'static str>,
    pub estimates: Vec<f64>,
    /// Inverse of the negative Hessian; `None` when it is not positive
    /// definite.
    pub covariance: Option<DMatrix<f64>>,
    pub std_errors: Option<Vec<f64>>,
    pub sigma2_init: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl GarchFit {
    pub fn t_stats(&self) -> Option<Vec<f64>> {
        self.std_errors
            .as_ref()
            .map(|se| self.estimates.iter().zip(se).map(|(e, s)| e / s).collect())
    }
}

fn default_start(x: &[f64], spec: &MeanModelSpec) -> GarchParams {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (zeta1, zeta2, zeta3) = (0.02, 0.05, 0.9);
    let persistence = zeta1 + 0.5 * zeta2 + zeta3;
    GarchParams {
        zeta0: var * (1.0 - persistence),
        zeta1,
        zeta2,
        zeta3,
        alpha0: if spec.uses_intercept { mean } else { 0.0 },
        alpha1: 0.0,
    }
}

/// Maximum-likelihood fit of the GARCH-in-mean model.
pub fn garch_fit(x: &[f64], spec: &MeanModelSpec, init: Option<GarchParams>, opts: &GarchFitOptions) -> Result<GarchFit> {
    if x.len() < 100 {
        return Err(Error::SampleTooSmall {
            needed: 100,
            found: x.len(),
        });
    }
    let mut warnings = Vec::new();
    if x.len() < 500 {
        warnings.push(format!("only {} observations; GARCH estimates may be unreliable", x.len()));
    }
    let s2_init = opts.sigma2_init.unwrap_or_else(|| initial_variance(x));
    let start = match init {
        Some(p) => {
            p.validate()?;
            p
        }
        None => default_start(x, spec),
    };
    let tr = Transform { spec: *spec };
    let n = x.len() as f64;
    let objective = |th: &DVector<f64>| {
        let (raw, jac) = tr.to_raw(th);
        match loglik_grad(x, &raw, spec, s2_init) {
            Some((ll, g)) => {
                let g = DVector::from_row_slice(&g);
                (-ll / n, -(jac.transpose() * g) / n)
            }
            None => (f64::INFINITY, DVector::zeros(th.len())),
        }
    };
    let res = optim::minimize(objective, tr.to_theta(&start), opts.optimizer);
    if !res.converged {
        return Err(Error::NonConvergence {
            iterations: res.iterations,
            grad_norm: res.grad_norm,
        });
    }
    let (raw, _) = tr.to_raw(&res.x);
    let params = GarchParams::from_raw(&raw);
    let mut output = garch_filter(x, &params, spec, s2_init)?;

    // Numerical Hessian of the total log-likelihood in raw coordinates,
    // by central differences of the analytic gradient.
    let slots: Vec<usize> = (0..4).chain(tr.alpha_slots()).collect();
    let k = slots.len();
    let mut hess = DMatrix::zeros(k, k);
    let mut hessian_ok = true;
    for (j, &sj) in slots.iter().enumerate() {
        let h = opts.hessian_step * raw[sj].abs().max(1e-3);
        let mut up = raw;
        up[sj] += h;
        let mut dn = raw;
        dn[sj] -= h;
        match (loglik_grad(x, &up, spec, s2_init), loglik_grad(x, &dn, spec, s2_init)) {
            (Some((_, gu)), Some((_, gd))) => {
                for (i, &si) in slots.iter().enumerate() {
                    hess[(i, j)] = (gu[si] - gd[si]) / (2.0 * h);
                }
            }
            _ => hessian_ok = false,
        }
    }
    let hess = 0.5 * (&hess + hess.transpose());
    let covariance = if hessian_ok {
        (-hess).cholesky().map(|c| c.inverse())
    } else {
        None
    };
    if covariance.is_none() {
        warnings.push("Hessian not positive definite; standard errors unavailable".to_string());
    }
    let std_errors = covariance
        .as_ref()
        .map(|c| (0..k).map(|i| c[(i, i)].sqrt()).collect::<Vec<_>>());
    let names: Vec<&'static str> = slots.iter().map(|&s| GarchParams::NAMES[s]).collect();
    let estimates: Vec<f64> = slots.iter().map(|&s| raw[s]).collect();
    for me in &mut output.mean_estimates {
        let idx = names.iter().position(|n| *n == me.name).expect("mean coefficient estimated");
        me.std_error = std_errors.as_ref().map(|se| se[idx]);
    }
    Ok(GarchFit {
        params,
        output,
        names,
        estimates,
        covariance,
        std_errors,
        sigma2_init: s2_init,
        iterations: res.iterations,
        warnings,
    })
}

/// One row of the largest-residual table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremeResidual {
    pub date: NaiveDate,
    pub value: f64,
    pub std_residual: f64,
}

/// The `k` days with the largest absolute standardized residuals, listed
/// in date order. Ties in magnitude go to the earlier date.
pub fn largest_residuals(out: &FilterOutput, dates: &[NaiveDate], k: usize) -> Result<Vec<ExtremeResidual>> {
    if dates.len() != out.len() {
        return Err(Error::LengthMismatch {
            expected: out.len(),
            found: dates.len(),
        });
    }
    if k > out.len() {
        return Err(Error::InvalidParams(format!("k = {k} exceeds series length {}", out.len())));
    }
    let x = out.reconstruct_observations();
    let mut idx: Vec<usize> = (0..out.len()).collect();
    idx.sort_by(|&a, &b| {
        out.std_residuals[b]
            .abs()
            .total_cmp(&out.std_residuals[a].abs())
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx
        .into_iter()
        .map(|i| ExtremeResidual {
            date: dates[i],
            value: x[i],
            std_residual: out.std_residuals[i],
        })
        .collect())
}
