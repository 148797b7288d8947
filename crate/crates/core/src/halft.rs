//! Half-t local scales and the law of the scale-mixture shock `lambda * z`.
//!
//! With `lambda ~ t+(nu)` and `z ~ N(0, tau^2)`, the shock is a Gaussian scale
//! mixture whose tails decay like `|s|^(-nu-1)`. `nu = inf` collapses the
//! scale to one and the shock to a plain normal.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

/// Positive-t random scale: `|T|` with `T ~ t(nu)`.
#[derive(Debug, Clone)]
pub struct HalfT {
    nu: f64,
    gamma: Option<Gamma<f64>>,
}

impl HalfT {
    /// `nu` must be at least 1; `f64::INFINITY` gives the degenerate scale 1.
    pub fn new(nu: f64) -> Self {
        assert!(nu >= 1.0, "half-t degrees of freedom must be >= 1, got {nu}");
        let gamma = if nu.is_finite() && nu != 1.0 && nu != 2.0 {
            Some(Gamma::new(nu / 2.0, 2.0 / nu).expect("valid gamma parameters"))
        } else {
            None
        };
        Self { nu, gamma }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Density of the half-t at `x >= 0`.
    pub fn pdf(&self, x: f64) -> f64 {
        half_t_pdf(self.nu, x)
    }
}

impl Distribution<f64> for HalfT {
    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.nu.is_infinite() {
            return 1.0;
        }
        let z: f64 = rng.sample(StandardNormal);
        // T = Z / sqrt(V / nu) with V ~ chi^2(nu).
        let v_over_nu = if self.nu == 2.0 {
            rng.sample::<f64, _>(Exp1)
        } else if self.nu == 1.0 {
            let w: f64 = rng.sample(StandardNormal);
            w * w
        } else {
            self.gamma.as_ref().expect("gamma set for general nu").sample(rng)
        };
        z.abs() / v_over_nu.sqrt()
    }
}

/// Log normalizing constant of the half-t density.
pub fn half_t_log_norm(nu: f64) -> f64 {
    (2.0f64).ln() + ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln()
}

pub fn half_t_pdf(nu: f64, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if nu.is_infinite() {
        return (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * x * x).exp();
    }
    (half_t_log_norm(nu) - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp()
}

/// Standard normal upper tail.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Distribution of `lambda * z`, `lambda ~ t+(nu)`, `z ~ N(0, tau^2)`.
///
/// Probabilities are computed by integrating the conditional normal tail
/// against the half-t density in `w = ln(lambda)`. The integrand is smooth
/// and decays exponentially at both ends, so the trapezoid rule with a
/// modest step is accurate to near machine precision.
#[derive(Debug, Clone)]
pub struct ScaleMixtureShock {
    nu: f64,
    tau: f64,
    log_norm: f64,
}

const QUAD_STEP: f64 = 0.1;
const QUAD_LOW: f64 = -40.0;

impl ScaleMixtureShock {
    pub fn new(nu: f64, tau2: f64) -> Self {
        assert!(nu >= 1.0 && tau2 > 0.0);
        Self {
            nu,
            tau: tau2.sqrt(),
            log_norm: if nu.is_finite() { half_t_log_norm(nu) } else { 0.0 },
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `P(S > u)` for any real `u`.
    pub fn sf(&self, u: f64) -> f64 {
        if u < 0.0 {
            return 1.0 - self.sf(-u);
        }
        if self.nu.is_infinite() {
            return norm_sf(u / self.tau);
        }
        if u == 0.0 {
            return 0.5;
        }
        let w_star = (u / self.tau).ln();
        let hi = w_star.max(0.0) + 40.0 / self.nu + 2.0;
        let n = ((hi - QUAD_LOW) / QUAD_STEP).ceil() as usize;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = QUAD_LOW + k as f64 * QUAD_STEP;
            let lam = w.exp();
            let dens = (self.log_norm - 0.5 * (self.nu + 1.0) * (lam * lam / self.nu).ln_1p() + w).exp();
            let weight = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += weight * dens * norm_sf(u / (self.tau * lam));
        }
        acc * QUAD_STEP
    }

    pub fn cdf(&self, u: f64) -> f64 {
        1.0 - self.sf(u)
    }

    /// Density of the shock at `u != 0` (it diverges logarithmically at 0
    /// for finite `nu`).
    pub fn pdf(&self, u: f64) -> f64 {
        let u = u.abs();
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        if self.nu.is_infinite() {
            let x = u / self.tau;
            return inv_sqrt_2pi * (-0.5 * x * x).exp() / self.tau;
        }
        let w_star = (u / self.tau).ln();
        let hi = w_star.max(0.0) + 40.0 / self.nu + 2.0;
        let lo = QUAD_LOW.min(w_star - 10.0);
        let n = ((hi - lo) / QUAD_STEP).ceil() as usize;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = lo + k as f64 * QUAD_STEP;
            let lam = w.exp();
            let x = u / (self.tau * lam);
            // The Jacobian e^w cancels the 1/lambda of the conditional density.
            let dens = (self.log_norm - 0.5 * (self.nu + 1.0) * (lam * lam / self.nu).ln_1p()).exp();
            let weight = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += weight * dens * inv_sqrt_2pi * (-0.5 * x * x).exp() / self.tau;
        }
        acc * QUAD_STEP
    }

    /// Smallest `q` with `P(S > q) <= p`, by bisection.
    pub fn upper_quantile(&self, p: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = self.tau;
        while self.sf(hi) > p {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.sf(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        hi
    }
}

/// Survival function of the shock tabulated on `[0, u_max]` with a grid
/// uniform in `asinh(u / scale)`, so resolution is fine near zero and
/// relative further out. Linear interpolation keeps the tabulated function
/// monotone, which keeps every derived cell probability non-negative.
#[derive(Debug, Clone)]
pub struct ShockSfTable {
    scale: f64,
    v_step: f64,
    values: Vec<f64>,
    exact: Option<ScaleMixtureShock>,
    u_max: f64,
}

impl ShockSfTable {
    pub fn new(shock: &ScaleMixtureShock, u_max: f64, points: usize) -> Self {
        if shock.nu.is_infinite() {
            return Self {
                scale: 1.0,
                v_step: 1.0,
                values: Vec::new(),
                exact: Some(shock.clone()),
                u_max,
            };
        }
        let scale = shock.tau * 1e-3;
        let v_max = (u_max / scale).asinh();
        let v_step = v_max / (points - 1) as f64;
        let values = (0..points)
            .map(|k| shock.sf(scale * (k as f64 * v_step).sinh()))
            .collect();
        Self {
            scale,
            v_step,
            values,
            exact: None,
            u_max,
        }
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    /// `P(S > u)`; arguments beyond the table are clamped to its edge.
    #[inline]
    pub fn sf(&self, u: f64) -> f64 {
        if let Some(exact) = &self.exact {
            return exact.sf(u);
        }
        if u < 0.0 {
            return 1.0 - self.sf(-u);
        }
        let pos = (u / self.scale).asinh() / self.v_step;
        let k = pos.floor() as usize;
        if k + 1 >= self.values.len() {
            return *self.values.last().expect("non-empty table");
        }
        let frac = pos - k as f64;
        self.values[k] + frac * (self.values[k + 1] - self.values[k])
    }

    /// `P(a < S <= b)` for `a <= b`, computed on the side of zero where the
    /// tail probabilities are small.
    #[inline]
    pub fn interval(&self, a: f64, b: f64) -> f64 {
        if a >= 0.0 {
            (self.sf(a) - self.sf(b)).max(0.0)
        } else if b <= 0.0 {
            (self.sf(-b) - self.sf(-a)).max(0.0)
        } else {
            (1.0 - self.sf(-a) - self.sf(b)).max(0.0)
        }
    }
}
