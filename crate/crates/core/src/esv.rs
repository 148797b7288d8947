//! Particle filtering for stochastic volatility with heavy-tailed
//! (half-t scaled) shocks, and empirical-Bayes grid search over the
//! volatility parameters.
//!
//! The volatility state follows
//!
//! ```text
//! sigma[t] = max(FLOOR, sigma0 + phi * sigma[t-1] + lambda[t] * z[t])
//! lambda[t] ~ t+(nu),  z[t] ~ N(0, tau2)
//! ```
//!
//! and returns are Gaussian around the mean model. Particles are propagated
//! through the transition, weighted by the observation density, and
//! resampled systematically when the effective sample size falls below half
//! the particle count. Mean coefficients are either held fixed or learned:
//! each particle carries the conjugate sufficient statistics of the Bayesian
//! regression of returns on the mean regressors, so the static coefficients
//! are integrated out analytically along every particle's volatility path.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halft::{half_t_log_norm, HalfT};
use crate::model::{FilterOutput, MeanEstimate, MeanModelSpec};
use crate::rng::StreamKey;

/// Lower bound for the volatility state, percent.
pub const SIGMA_FLOOR: f64 = 1e-4;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsvParams {
    /// Level intercept of the volatility recursion, percent.
    pub sigma0: f64,
    /// Persistence, in `[0, 1)`.
    pub phi: f64,
    /// Shock variance, percent^2.
    pub tau2: f64,
    /// Degrees of freedom of the half-t scale; infinity gives Gaussian SV.
    pub nu: f64,
}

impl EsvParams {
    pub fn gaussian(sigma0: f64, phi: f64, tau2: f64) -> Self {
        Self {
            sigma0,
            phi,
            tau2,
            nu: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma0 >= 0.0
            && self.sigma0.is_finite()
            && (0.0..1.0).contains(&self.phi)
            && self.tau2 > 0.0
            && self.tau2.is_finite()
            && self.nu >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("volatility parameters violate constraints: {self:?}")))
        }
    }

    /// Fixed point of the noiseless recursion, `sigma0 / (1 - phi)`.
    pub fn stationary_level(&self) -> f64 {
        (self.sigma0 / (1.0 - self.phi)).max(SIGMA_FLOOR)
    }
}

/// One set of transition draws: the half-t scale and the `N(0, tau2)` shock.
#[derive(Debug, Clone, Copy)]
pub struct ShockDraw {
    pub lambda: f64,
    pub z: f64,
}

/// Volatility transition for one particle.
#[inline]
pub fn propagate_particle(sigma_prev: f64, params: &EsvParams, draw: ShockDraw) -> f64 {
    debug_assert!(sigma_prev > 0.0);
    (params.sigma0 + params.phi * sigma_prev + draw.lambda * draw.z).max(SIGMA_FLOOR)
}

/// Defensive mixture proposal for the half-t scale:
/// `q(l) = (1 - eps) p(l) + eps c(l)` with `c` a half-Cauchy of scale `s`.
#[derive(Debug, Clone, Copy)]
struct ScaleProposal {
    eps: f64,
    scale: f64,
    nu: f64,
    /// `ln(2 / (pi s)) - ln` of the half-t normalizing constant.
    log_const: f64,
}

impl ScaleProposal {
    fn new(nu: f64, eps: f64, scale: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) || !(scale > 0.0) {
            return Err(Error::InvalidParams(format!(
                "tail mixture needs 0 <= tail_mix < 1 and tail_scale > 0, got {eps} and {scale}"
            )));
        }
        let eps = if nu.is_finite() { eps } else { 0.0 };
        let log_const = if nu.is_finite() {
            (2.0 / (std::f64::consts::PI * scale)).ln() - half_t_log_norm(nu)
        } else {
            0.0
        };
        Ok(Self {
            eps,
            scale,
            nu,
            log_const,
        })
    }

    /// A scale draw and `ln p(l) - ln q(l)`.
    #[inline]
    fn draw<R: Rng + ?Sized>(&self, half_t: &HalfT, rng: &mut R) -> (f64, f64) {
        if self.eps == 0.0 {
            return (half_t.sample(rng), 0.0);
        }
        let lambda = if rng.random::<f64>() < self.eps {
            self.scale * (std::f64::consts::FRAC_PI_2 * rng.random::<f64>()).tan()
        } else {
            half_t.sample(rng)
        };
        let r = lambda / self.scale;
        let log_c_over_p =
            self.log_const - (r * r).ln_1p() + 0.5 * (self.nu + 1.0) * (lambda * lambda / self.nu).ln_1p();
        let q_over_p = (1.0 - self.eps) + self.eps * log_c_over_p.exp();
        (lambda, -q_over_p.ln())
    }
}

/// How the mean coefficients are handled by the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeanTreatment {
    /// Conjugate Gaussian learning with an independent `N(0, prior_sd^2)`
    /// prior on each coefficient.
    Learn { prior_sd: f64 },
    /// Known coefficients.
    Fixed { alpha0: f64, alpha1: f64 },
}

impl Default for MeanTreatment {
    fn default() -> Self {
        MeanTreatment::Learn { prior_sd: 10.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EsvFilterOptions {
    pub n_particles: usize,
    pub seed: u64,
    /// Random stream within the seed. Runs that should share shock
    /// sequences (grid points) use the same stream.
    pub stream: u64,
    pub mean: MeanTreatment,
    /// Volatility before the first observation; defaults to the stationary
    /// level of the recursion.
    pub initial_sigma: Option<f64>,
    /// Resample when ESS falls below this fraction of the particle count.
    pub resample_fraction: f64,
    /// Degeneracy is reported when fewer than this many distinct particles
    /// survive a resampling step. Uniform weights after resampling make the
    /// distinct count the effective size of the resampled set.
    pub min_ess: f64,
    /// Share of particles whose half-t scale is drawn from a half-Cauchy
    /// of scale `tail_scale` instead of the model law. Weights are
    /// corrected by the density ratio, so the estimator targets the same
    /// model; the heavier draws keep particles available after very large
    /// returns. Ignored for Gaussian volatility shocks.
    pub tail_mix: f64,
    pub tail_scale: f64,
}

impl EsvFilterOptions {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            seed,
            stream: 0,
            mean: MeanTreatment::default(),
            initial_sigma: None,
            resample_fraction: 0.5,
            min_ess: 2.0,
            tail_mix: 0.1,
            tail_scale: 10.0,
        }
    }
}

/// Conjugate statistics of the per-particle Bayesian mean regression:
/// precision (upper triangle of a symmetric 2x2) and precision-weighted mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStats {
    pub precision: [f64; 3],
    pub moment: [f64; 2],
}

impl MeanStats {
    fn prior(prior_sd: f64) -> Self {
        let p = 1.0 / (prior_sd * prior_sd);
        Self {
            precision: [p, 0.0, p],
            moment: [0.0, 0.0],
        }
    }

    /// Posterior mean and covariance (upper triangle) of the coefficients.
    #[inline]
    fn posterior(&self, k: usize) -> ([f64; 2], [f64; 3]) {
        let [a, c, d] = self.precision;
        if k == 1 {
            let v = 1.0 / a;
            ([self.moment[0] * v, 0.0], [v, 0.0, 0.0])
        } else {
            let det = a * d - c * c;
            let cov = [d / det, -c / det, a / det];
            let m = [
                cov[0] * self.moment[0] + cov[1] * self.moment[1],
                cov[1] * self.moment[0] + cov[2] * self.moment[1],
            ];
            (m, cov)
        }
    }

    /// Predictive mean of `h'alpha` and its variance.
    #[inline]
    fn predict(&self, k: usize, h: [f64; 2]) -> (f64, f64) {
        let (m, cov) = self.posterior(k);
        if k == 1 {
            (h[0] * m[0], h[0] * h[0] * cov[0])
        } else {
            (
                h[0] * m[0] + h[1] * m[1],
                h[0] * h[0] * cov[0] + 2.0 * h[0] * h[1] * cov[1] + h[1] * h[1] * cov[2],
            )
        }
    }

    #[inline]
    fn update(&mut self, h: [f64; 2], x: f64, inv_var: f64) {
        self.precision[0] += h[0] * h[0] * inv_var;
        self.precision[1] += h[0] * h[1] * inv_var;
        self.precision[2] += h[1] * h[1] * inv_var;
        self.moment[0] += h[0] * x * inv_var;
        self.moment[1] += h[1] * x * inv_var;
    }
}

/// Filter state at the end of a day.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub sigmas: Vec<f64>,
    /// Present only when the mean is learned.
    pub mean_stats: Option<Vec<MeanStats>>,
    /// Normalized weights.
    pub weights: Vec<f64>,
    pub key: StreamKey,
}

/// Particle filter with the default learned-mean treatment.
pub fn esv_filter(x: &[f64], params: &EsvParams, spec: &MeanModelSpec, n_particles: usize, seed: u64) -> Result<FilterOutput> {
    esv_filter_with(x, params, spec, &EsvFilterOptions::new(n_particles, seed))
}

pub fn esv_filter_with(x: &[f64], params: &EsvParams, spec: &MeanModelSpec, opts: &EsvFilterOptions) -> Result<FilterOutput> {
    Ok(run_filter(x, params, spec, opts)?.0)
}

/// Systematic resampling: ancestor indices for one uniform offset.
fn systematic_ancestors(weights: &[f64], u: f64, out: &mut Vec<usize>) {
    let n = weights.len();
    out.clear();
    let step = 1.0 / n as f64;
    let mut target = u * step;
    let mut cum = weights[0];
    let mut j = 0;
    for _ in 0..n {
        while target > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
        target += step;
    }
}

/// Filter and return the terminal particle set.
pub fn run_filter(
    x: &[f64],
    params: &EsvParams,
    spec: &MeanModelSpec,
    opts: &EsvFilterOptions,
) -> Result<(FilterOutput, ParticleSet)> {
    params.validate()?;
    let n = opts.n_particles;
    if n < 100 {
        return Err(Error::InvalidParams(format!("need at least 100 particles, got {n}")));
    }
    if x.is_empty() {
        return Err(Error::SampleTooSmall { needed: 1, found: 0 });
    }
    let k = spec.n_coefficients();
    let key = StreamKey::new(opts.seed, opts.stream);
    let half_t = HalfT::new(params.nu);
    let tau = params.tau2.sqrt();
    let proposal = ScaleProposal::new(params.nu, opts.tail_mix, opts.tail_scale)?;
    let init = opts.initial_sigma.unwrap_or_else(|| params.stationary_level()).max(SIGMA_FLOOR);

    let mut sigmas = vec![init; n];
    let mut stats = match opts.mean {
        MeanTreatment::Learn { prior_sd } => Some(vec![MeanStats::prior(prior_sd); n]),
        MeanTreatment::Fixed { .. } => None,
    };
    let mut weights = vec![1.0 / n as f64; n];
    let mut logw = vec![0.0; n];
    let mut pred_means = vec![0.0; n];
    let mut ancestors = Vec::with_capacity(n);
    let mut scratch_sig = vec![0.0; n];
    let mut scratch_stats = stats.clone();

    let len = x.len();
    let mut out = FilterOutput {
        mu: Vec::with_capacity(len),
        sigma: Vec::with_capacity(len),
        shock: Vec::with_capacity(len),
        loglik: 0.0,
        std_residuals: Vec::with_capacity(len),
        mean_estimates: Vec::new(),
    };

    for (t, &xt) in x.iter().enumerate() {
        let mut rng = key.at(t as u64);
        let mut max_lw = f64::NEG_INFINITY;
        let mut prior_mass = 0.0;
        for i in 0..n {
            let (lambda, log_ratio) = proposal.draw(&half_t, &mut rng);
            prior_mass += weights[i] * log_ratio.exp();
            let z: f64 = rng.sample::<f64, _>(StandardNormal) * tau;
            let s = propagate_particle(sigmas[i], params, ShockDraw { lambda, z });
            sigmas[i] = s;
            let s2 = s * s;
            let (m, v) = match (&stats, opts.mean) {
                (Some(st), _) => {
                    let (pm, pv) = st[i].predict(k, spec.regressors(s));
                    (pm, s2 + pv)
                }
                (None, MeanTreatment::Fixed { alpha0, alpha1 }) => (spec.mean(alpha0, alpha1, s), s2),
                (None, MeanTreatment::Learn { .. }) => unreachable!(),
            };
            pred_means[i] = m;
            let r = xt - m;
            let lw = weights[i].ln() + log_ratio - 0.5 * (LN_2PI + v.ln() + r * r / v);
            logw[i] = lw;
            if lw > max_lw {
                max_lw = lw;
            }
        }
        if !max_lw.is_finite() {
            return Err(Error::NonFiniteLikelihood { index: t });
        }
        let sum: f64 = logw.iter().map(|lw| (lw - max_lw).exp()).sum();
        let log_mass = max_lw + sum.ln();
        let increment = log_mass - prior_mass.ln();
        if !increment.is_finite() {
            return Err(Error::NonFiniteLikelihood { index: t });
        }
        out.loglik += increment;

        let mut sig_hat = 0.0;
        let mut mu_hat = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let w = (logw[i] - log_mass).exp();
            weights[i] = w;
            sig_hat += w * sigmas[i];
            mu_hat += w * pred_means[i];
            sum_sq += w * w;
        }
        // Renormalize against rounding drift.
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
        out.sigma.push(sig_hat);
        out.mu.push(mu_hat);
        out.std_residuals.push((xt - mu_hat) / sig_hat);

        if let Some(st) = stats.as_mut() {
            for i in 0..n {
                let s = sigmas[i];
                st[i].update(spec.regressors(s), xt, 1.0 / (s * s));
            }
        }

        let ess = 1.0 / sum_sq;
        if ess < opts.resample_fraction * n as f64 {
            let u: f64 = rng.random();
            systematic_ancestors(&weights, u, &mut ancestors);
            let distinct = 1 + ancestors.windows(2).filter(|w| w[0] != w[1]).count();
            if (distinct as f64) < opts.min_ess {
                return Err(Error::ParticleDegeneracy {
                    index: t,
                    ess: distinct as f64,
                });
            }
            for (i, &a) in ancestors.iter().enumerate() {
                scratch_sig[i] = sigmas[a];
            }
            std::mem::swap(&mut sigmas, &mut scratch_sig);
            if let (Some(st), Some(sc)) = (stats.as_mut(), scratch_stats.as_mut()) {
                for (i, &a) in ancestors.iter().enumerate() {
                    sc[i] = st[a];
                }
                std::mem::swap(st, sc);
            }
            weights.fill(1.0 / n as f64);
        }
    }

    out.shock = shocks_from_sigma(&out.sigma, params);

    if let Some(st) = &stats {
        // Moments of the mixture of per-particle Gaussian posteriors.
        let mut mean = [0.0; 2];
        let mut second = [0.0; 3];
        for (w, s) in weights.iter().zip(st) {
            let (m, cov) = s.posterior(k);
            mean[0] += w * m[0];
            mean[1] += w * m[1];
            second[0] += w * (cov[0] + m[0] * m[0]);
            second[1] += w * (cov[1] + m[0] * m[1]);
            second[2] += w * (cov[2] + m[1] * m[1]);
        }
        let var = [second[0] - mean[0] * mean[0], second[2] - mean[1] * mean[1]];
        out.mean_estimates = spec
            .coefficient_names()
            .into_iter()
            .enumerate()
            .map(|(j, name)| MeanEstimate {
                name: name.to_string(),
                estimate: mean[j],
                std_error: Some(var[j].max(0.0).sqrt()),
            })
            .collect();
    } else if let MeanTreatment::Fixed { alpha0, alpha1 } = opts.mean {
        out.mean_estimates = spec
            .coefficient_names()
            .into_iter()
            .map(|name| MeanEstimate {
                name: name.to_string(),
                estimate: if name == "alpha0" { alpha0 } else { alpha1 },
                std_error: None,
            })
            .collect();
    }

    let set = ParticleSet {
        sigmas,
        mean_stats: stats,
        weights,
        key,
    };
    Ok((out, set))
}

/// Filtered volatility less its one-step prediction from the previous day.
pub fn shocks_from_sigma(sigma: &[f64], params: &EsvParams) -> Vec<f64> {
    let mut shocks = Vec::with_capacity(sigma.len());
    if !sigma.is_empty() {
        shocks.push(0.0);
    }
    for w in sigma.windows(2) {
        shocks.push(w[1] - (params.sigma0 + params.phi * w[0]));
    }
    shocks
}

/// Volatility shocks implied by a filter run: the filtered volatility less
/// its one-step prediction from the previous day's filtered volatility.
/// The first day has no predecessor and is assigned zero.
pub fn extract_shocks(out: &FilterOutput, params: &EsvParams) -> Result<Vec<f64>> {
    out.check_lengths()?;
    Ok(shocks_from_sigma(&out.sigma, params))
}

/// Candidate values for the three volatility parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub sigma0_values: Vec<f64>,
    pub phi_values: Vec<f64>,
    pub tau2_values: Vec<f64>,
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            sigma0_values: log_spaced(0.005, 0.1, 10),
            phi_values: vec![0.90, 0.95, 0.97, 0.99],
            tau2_values: log_spaced(1e-4, 1e-1, 8),
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.sigma0_values.len() * self.phi_values.len() * self.tau2_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, sigma0 slowest and tau2 fastest.
    pub fn points(&self, nu: f64) -> Vec<EsvParams> {
        let mut pts = Vec::with_capacity(self.len());
        for &sigma0 in &self.sigma0_values {
            for &phi in &self.phi_values {
                for &tau2 in &self.tau2_values {
                    pts.push(EsvParams { sigma0, phi, tau2, nu });
                }
            }
        }
        pts
    }

    pub fn validate(&self, nu: f64) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidParams("volatility grid is empty".to_string()));
        }
        for axis in [&self.sigma0_values, &self.phi_values, &self.tau2_values] {
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidParams("grid values must be strictly ascending".to_string()));
            }
        }
        self.points(nu).iter().try_for_each(EsvParams::validate)
    }

    /// Grid indices of a parameter set, if each coordinate is on the grid.
    pub fn indices_of(&self, p: &EsvParams) -> Option<[usize; 3]> {
        let find = |axis: &[f64], v: f64| axis.iter().position(|a| (a - v).abs() <= 1e-12 * a.abs().max(1.0));
        Some([
            find(&self.sigma0_values, p.sigma0)?,
            find(&self.phi_values, p.phi)?,
            find(&self.tau2_values, p.tau2)?,
        ])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridPointResult {
    pub params: EsvParams,
    /// Negative infinity when the filter failed numerically at this point.
    pub loglik: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: EsvParams,
    pub output: FilterOutput,
    /// Log-likelihood at every grid point, in [`GridSpec::points`] order.
    pub surface: Vec<GridPointResult>,
}

fn tag(index: usize, p: &EsvParams, e: Error) -> Error {
    Error::GridPoint {
        index,
        sigma0: p.sigma0,
        phi: p.phi,
        tau2: p.tau2,
        source: Box::new(e),
    }
}

/// Pick the grid point with the largest estimated log-likelihood.
///
/// All grid points are filtered with the same random stream so that their
/// likelihood estimates share Monte Carlo noise and compare more sharply.
/// `opts.stream` selects that common stream. A point where the filter
/// fails numerically (for instance, all particles collapse onto one path
/// because the parameters cannot explain the data) is scored as negative
/// infinity and its failure recorded; the search fails only if every point
/// does, or on any non-numeric error.
pub fn grid_search_with(
    x: &[f64],
    grid: &GridSpec,
    spec: &MeanModelSpec,
    nu: f64,
    opts: &EsvFilterOptions,
) -> Result<GridSearchResult> {
    grid.validate(nu)?;
    let points = grid.points(nu);
    let runs: Vec<Result<FilterOutput>> = points
        .par_iter()
        .map(|p| esv_filter_with(x, p, spec, opts))
        .collect();
    let mut surface = Vec::with_capacity(points.len());
    let mut best: Option<(usize, FilterOutput)> = None;
    let mut first_failure: Option<Error> = None;
    for (index, (p, run)) in points.iter().zip(runs).enumerate() {
        match run {
            Ok(out) => {
                surface.push(GridPointResult {
                    params: *p,
                    loglik: out.loglik,
                    failure: None,
                });
                if best.as_ref().is_none_or(|(_, b)| out.loglik > b.loglik) {
                    best = Some((index, out));
                }
            }
            Err(e) if e.is_numeric() => {
                surface.push(GridPointResult {
                    params: *p,
                    loglik: f64::NEG_INFINITY,
                    failure: Some(e.to_string()),
                });
                first_failure.get_or_insert(tag(index, p, e));
            }
            Err(e) => return Err(tag(index, p, e)),
        }
    }
    match best {
        Some((idx, output)) => Ok(GridSearchResult {
            best: points[idx],
            output,
            surface,
        }),
        None => Err(first_failure.expect("every point failed")),
    }
}

pub fn grid_search(
    x: &[f64],
    grid: &GridSpec,
    spec: &MeanModelSpec,
    nu: f64,
    n_particles: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    grid_search_with(x, grid, spec, nu, &EsvFilterOptions::new(n_particles, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MeanModel;

    fn m3() -> MeanModelSpec {
        MeanModelSpec::new(MeanModel::M3)
    }

    fn wobble(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i as f64) * 0.91).sin() * (1.0 + 0.5 * ((i as f64) * 0.05).cos())).collect()
    }

    #[test]
    fn zero_shock_is_deterministic_step() {
        let p = EsvParams {
            sigma0: 0.1,
            phi: 0.9,
            tau2: 0.01,
            nu: 2.0,
        };
        let s = propagate_particle(1.3, &p, ShockDraw { lambda: 123.0, z: 0.0 });
        assert_eq!(s, 0.1 + 0.9 * 1.3);
    }

    #[test]
    fn negative_candidate_hits_floor() {
        let p = EsvParams {
            sigma0: 0.1,
            phi: 0.9,
            tau2: 0.01,
            nu: 2.0,
        };
        assert_eq!(propagate_particle(1.0, &p, ShockDraw { lambda: 5.0, z: -1.0 }), SIGMA_FLOOR);
    }

    #[test]
    fn pinned_volatility_matches_gaussian_loglik() {
        let x = wobble(150);
        let sigma0 = 1.2;
        let p = EsvParams {
            sigma0,
            phi: 0.0,
            tau2: 1e-12,
            nu: 2.0,
        };
        let mut opts = EsvFilterOptions::new(500, 3);
        opts.mean = MeanTreatment::Fixed { alpha0: 0.0, alpha1: 0.0 };
        let out = esv_filter_with(&x, &p, &m3(), &opts).unwrap();
        let exact: f64 = x
            .iter()
            .map(|v| -0.5 * (LN_2PI + (sigma0 * sigma0).ln() + v * v / (sigma0 * sigma0)))
            .sum();
        assert!((out.loglik - exact).abs() < 0.1, "{} vs {exact}", out.loglik);
    }

    #[test]
    fn seed_determinism() {
        let x = wobble(120);
        let p = EsvParams {
            sigma0: 0.05,
            phi: 0.95,
            tau2: 0.01,
            nu: 2.0,
        };
        let spec = MeanModelSpec::new(MeanModel::M1a);
        let a = esv_filter(&x, &p, &spec, 400, 11).unwrap();
        let b = esv_filter(&x, &p, &spec, 400, 11).unwrap();
        assert_eq!(a, b);
        let c = esv_filter(&x, &p, &spec, 400, 12).unwrap();
        assert_ne!(a.loglik, c.loglik);
        assert!(a.sigma.iter().all(|s| *s > 0.0));
        assert_eq!(a.mean_estimates.len(), 2);
    }

    #[test]
    fn rejects_too_few_particles() {
        let p = EsvParams::gaussian(0.05, 0.95, 0.01);
        assert!(esv_filter(&[0.1, 0.2], &p, &m3(), 50, 1).is_err());
        assert!(esv_filter(&[], &p, &m3(), 200, 1).is_err());
    }

    #[test]
    fn conjugate_update_matches_batch_regression() {
        // With volatility pinned, the learned posterior is the weighted
        // least-squares posterior under the N(0, 100 I) prior.
        let x = wobble(80);
        let sigma = 0.8;
        let spec = MeanModelSpec::new(MeanModel::M1a);
        let p = EsvParams {
            sigma0: sigma,
            phi: 0.0,
            tau2: 1e-14,
            nu: f64::INFINITY,
        };
        let out = esv_filter(&x, &p, &spec, 200, 5).unwrap();
        // h = (1, s^2) is constant, so the slope is unidentified beyond the
        // prior; check the implied mean h'alpha instead.
        let s2 = sigma * sigma;
        let n = x.len() as f64;
        let prec = nalgebra::Matrix2::new(0.01 + n / s2, n * s2 / s2, n * s2 / s2, 0.01 + n * s2 * s2 / s2);
        let sum: f64 = x.iter().sum();
        let mom = nalgebra::Vector2::new(sum / s2, s2 * sum / s2);
        let m = prec.try_inverse().unwrap() * mom;
        let est = &out.mean_estimates;
        let implied = est[0].estimate + est[1].estimate * s2;
        assert!((implied - (m[0] + m[1] * s2)).abs() < 1e-6);
    }

    #[test]
    fn extract_shocks_constant_sigma() {
        let p = EsvParams {
            sigma0: 0.1,
            phi: 0.9,
            tau2: 0.01,
            nu: 2.0,
        };
        let out = FilterOutput {
            mu: vec![0.0; 4],
            sigma: vec![1.5; 4],
            shock: vec![0.0; 4],
            loglik: 0.0,
            std_residuals: vec![0.0; 4],
            mean_estimates: vec![],
        };
        let s = extract_shocks(&out, &p).unwrap();
        assert_eq!(s[0], 0.0);
        for v in &s[1..] {
            assert!((v - (1.5 - 0.1 - 0.9 * 1.5)).abs() < 1e-15);
        }
        let mut bad = out.clone();
        bad.mu.pop();
        assert!(matches!(extract_shocks(&bad, &p), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn systematic_resampling_counts() {
        let w = [0.1, 0.6, 0.0, 0.3];
        let mut a = Vec::new();
        systematic_ancestors(&w, 0.5, &mut a);
        let count = |j| a.iter().filter(|&&x| x == j).count();
        assert_eq!(a.len(), 4);
        assert_eq!(count(2), 0);
        assert!(count(1) >= 2);
    }

    #[test]
    fn tail_proposal_weights_recover_model_law() {
        let half_t = HalfT::new(2.0);
        let proposal = ScaleProposal::new(2.0, 0.1, 10.0).unwrap();
        let mut rng = StreamKey::new(5, 0).rng();
        let n = 400_000;
        let (mut total, mut tail) = (0.0, 0.0);
        for _ in 0..n {
            let (lambda, log_ratio) = proposal.draw(&half_t, &mut rng);
            let w = log_ratio.exp();
            assert!(w <= 1.0 / 0.9 + 1e-12);
            total += w;
            if lambda > 3.0 {
                tail += w;
            }
        }
        // P(|T| > 3) for T ~ t(2) is 1 - 3 / sqrt(11).
        let exact_tail = 1.0 - 3.0 / 11f64.sqrt();
        assert!((total / n as f64 - 1.0).abs() < 0.01, "{}", total / n as f64);
        assert!((tail / n as f64 - exact_tail).abs() < 0.003, "{} vs {exact_tail}", tail / n as f64);
    }

    #[test]
    fn gaussian_shocks_skip_tail_proposal() {
        let proposal = ScaleProposal::new(f64::INFINITY, 0.1, 10.0).unwrap();
        let mut rng = StreamKey::new(5, 0).rng();
        assert_eq!(proposal.draw(&HalfT::new(f64::INFINITY), &mut rng), (1.0, 0.0));
        assert!(ScaleProposal::new(2.0, 1.0, 10.0).is_err());
    }

    #[test]
    fn singleton_grid_returns_its_point() {
        let x = wobble(60);
        let grid = GridSpec {
            sigma0_values: vec![0.05],
            phi_values: vec![0.95],
            tau2_values: vec![0.01],
        };
        let r = grid_search(&x, &grid, &m3(), 2.0, 200, 1).unwrap();
        assert_eq!(r.best, grid.points(2.0)[0]);
        assert_eq!(r.surface.len(), 1);
        assert_eq!(r.output.loglik, r.surface[0].loglik);
    }

    #[test]
    fn grid_validation() {
        let mut g = GridSpec::default();
        assert_eq!(g.len(), 320);
        g.validate(2.0).unwrap();
        g.phi_values = vec![0.9, 1.0];
        assert!(g.validate(2.0).is_err());
        let empty = GridSpec {
            sigma0_values: vec![],
            phi_values: vec![0.9],
            tau2_values: vec![0.1],
        };
        assert!(empty.validate(2.0).is_err());
    }
}
