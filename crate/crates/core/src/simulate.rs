//! Seeded generators for synthetic data with known latent truths, and a
//! deterministic grid filter that computes the exact likelihood of the
//! heavy-tailed volatility model up to discretization.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esv::{propagate_particle, EsvParams, ShockDraw, SIGMA_FLOOR};
use crate::garch::GarchParams;
use crate::halft::{HalfT, ScaleMixtureShock, ShockSfTable};
use crate::ingest::ReturnPanel;
use crate::model::MeanModelSpec;
use crate::rng::StreamKey;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct GarchPath {
    pub returns: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Simulate the asymmetric GARCH-in-mean recursion with Gaussian
/// innovations, started at the unconditional variance.
pub fn sim_garch(params: &GarchParams, spec: &MeanModelSpec, t: usize, seed: u64) -> Result<GarchPath> {
    params.validate()?;
    let mut rng = StreamKey::new(seed, 0).rng();
    let mut s2 = params.unconditional_variance();
    let mut returns = Vec::with_capacity(t);
    let mut sigma = Vec::with_capacity(t);
    for _ in 0..t {
        let s = s2.sqrt();
        let eps: f64 = rng.sample(StandardNormal);
        let e = s * eps;
        returns.push(spec.mean(params.alpha0, params.alpha1, s) + e);
        sigma.push(s);
        let arch = params.zeta1 + if e < 0.0 { params.zeta2 } else { 0.0 };
        s2 = params.zeta0 + arch * e * e + params.zeta3 * s2;
    }
    Ok(GarchPath { returns, sigma })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsvPath {
    pub returns: Vec<f64>,
    pub sigma: Vec<f64>,
    /// The raw innovations `lambda * z` before the floor is applied.
    pub shocks: Vec<f64>,
}

/// Simulate the heavy-tailed volatility model with Gaussian returns around
/// the mean model. The volatility before the first day is the stationary
/// level of the recursion, matching the filter's starting point.
pub fn sim_esv(params: &EsvParams, spec: &MeanModelSpec, alpha: (f64, f64), t: usize, seed: u64) -> Result<EsvPath> {
    params.validate()?;
    let mut rng = StreamKey::new(seed, 0).rng();
    let half_t = HalfT::new(params.nu);
    let tau = params.tau2.sqrt();
    let mut s = params.stationary_level();
    let mut path = EsvPath {
        returns: Vec::with_capacity(t),
        sigma: Vec::with_capacity(t),
        shocks: Vec::with_capacity(t),
    };
    for _ in 0..t {
        let lambda = half_t.sample(&mut rng);
        let z = rng.sample::<f64, _>(StandardNormal) * tau;
        s = propagate_particle(s, params, ShockDraw { lambda, z });
        let eps: f64 = rng.sample(StandardNormal);
        path.returns.push(spec.mean(alpha.0, alpha.1, s) + s * eps);
        path.sigma.push(s);
        path.shocks.push(lambda * z);
    }
    Ok(path)
}

/// Lower-triangular map from independent volatility shocks to the two
/// factor-volatility innovations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cholesky2 {
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl Cholesky2 {
    pub const IDENTITY: Cholesky2 = Cholesky2 {
        l11: 1.0,
        l21: 0.0,
        l22: 1.0,
    };

    pub fn apply(&self, d: [f64; 2]) -> [f64; 2] {
        [self.l11 * d[0], self.l21 * d[0] + self.l22 * d[1]]
    }
}

/// A span of days (indices, inclusive) in which every country's loading on
/// the second volatility shock is replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRegime {
    pub start: usize,
    pub end: usize,
    pub gamma2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSimConfig {
    pub esv_us: EsvParams,
    pub esv_eu: EsvParams,
    pub chol: Cholesky2,
    /// Constant expected factor returns.
    pub factor_mean: [f64; 2],
    pub countries: Vec<String>,
    /// Per-country loadings on the two factor-return innovations.
    pub b: Vec<[f64; 2]>,
    /// Per-country loadings on the two independent volatility shocks.
    pub gamma: Vec<[f64; 2]>,
    pub alpha: Vec<f64>,
    pub idio_sd: Vec<f64>,
    pub regimes: Vec<GammaRegime>,
    pub t: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl JointSimConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if let Err(e) = self.esv_us.validate() {
            issues.push(format!("esv_us: {e}"));
        }
        if let Err(e) = self.esv_eu.validate() {
            issues.push(format!("esv_eu: {e}"));
        }
        if !(self.chol.l11 > 0.0 && self.chol.l22 > 0.0 && self.chol.l21.is_finite()) {
            issues.push("cholesky diagonal must be positive".to_string());
        }
        let n = self.countries.len();
        if n == 0 {
            issues.push("at least one country is required".to_string());
        }
        for (name, len) in [
            ("b", self.b.len()),
            ("gamma", self.gamma.len()),
            ("alpha", self.alpha.len()),
            ("idio_sd", self.idio_sd.len()),
        ] {
            if len != n {
                issues.push(format!("{name} has {len} rows, expected {n}"));
            }
        }
        if self.idio_sd.iter().any(|s| !(*s >= 0.0)) {
            issues.push("idio_sd must be non-negative".to_string());
        }
        for r in &self.regimes {
            if r.start > r.end || r.end >= self.t {
                issues.push(format!("regime [{}, {}] outside 0..{}", r.start, r.end, self.t));
            }
            if r.gamma2.len() != n {
                issues.push(format!("regime gamma2 has {} entries, expected {n}", r.gamma2.len()));
            }
        }
        if self.t < 2 {
            issues.push("t must be at least 2".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }
}

/// Observables and latent truths of a joint simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPanel {
    /// Country returns, one column per country.
    pub countries: ReturnPanel,
    /// Factor returns, columns `US` and `EU`.
    pub factors: ReturnPanel,
    pub sigma: [Vec<f64>; 2],
    /// Factor-return innovations `sigma * xi`.
    pub factor_innovations: [Vec<f64>; 2],
    /// Independent volatility shocks.
    pub delta: [Vec<f64>; 2],
    /// Factor-volatility innovations, the Cholesky image of `delta`.
    pub eta: [Vec<f64>; 2],
}

/// Regression loadings implied by a simulation configuration, in the
/// parameterization of the contagion regressions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueLoadings {
    pub country: String,
    pub alpha: f64,
    pub beta_us: f64,
    pub beta_eu: f64,
    /// Loading on the US volatility shock `l11 * delta1`.
    pub gamma_us: f64,
    /// Loading on the orthogonal EU volatility shock `l22 * delta2`.
    pub gamma_eu: f64,
    pub idio_sd: f64,
}

impl JointSimConfig {
    pub fn true_loadings(&self) -> Vec<TrueLoadings> {
        (0..self.countries.len())
            .map(|i| TrueLoadings {
                country: self.countries[i].clone(),
                alpha: self.alpha[i],
                beta_us: self.b[i][0],
                beta_eu: self.b[i][1],
                gamma_us: self.gamma[i][0] / self.chol.l11,
                gamma_eu: self.gamma[i][1] / self.chol.l22,
                idio_sd: self.idio_sd[i],
            })
            .collect()
    }
}

#[derive(Serialize)]
struct TruthReport<'a> {
    config: &'a JointSimConfig,
    loadings: Vec<TrueLoadings>,
    vol_shock_law: &'a str,
}

impl JointPanel {
    /// Write observables and truths as separate files in `dir`:
    /// `countries.csv`, `factor_returns.csv`, `truth_states.csv` and
    /// `truth.json`. Returns the written paths.
    pub fn save_dir(&self, cfg: &JointSimConfig, dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let paths: Vec<_> = ["countries.csv", "factor_returns.csv", "truth_states.csv", "truth.json"]
            .iter()
            .map(|f| dir.join(f))
            .collect();
        self.countries.save(&paths[0])?;
        self.factors.save(&paths[1])?;
        let mut w = csv::Writer::from_path(&paths[2])?;
        w.write_record([
            "date", "sigma_us", "sigma_eu", "delta1", "delta2", "eta_us", "eta_eu", "innov_us", "innov_eu",
        ])?;
        for (t, d) in self.countries.dates.iter().enumerate() {
            let mut row = vec![d.to_string()];
            for series in [&self.sigma, &self.delta, &self.eta, &self.factor_innovations] {
                row.push(series[0][t].to_string());
                row.push(series[1][t].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        let report = TruthReport {
            config: cfg,
            loadings: cfg.true_loadings(),
            vol_shock_law: "half-t scale times Gaussian",
        };
        std::fs::write(&paths[3], serde_json::to_string_pretty(&report)? + "\n")?;
        Ok(paths)
    }
}

/// Weekdays starting at `start` (moved forward to a weekday if needed).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut d = start;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

pub fn sim_joint_panel(cfg: &JointSimConfig) -> Result<JointPanel> {
    cfg.validate()?;
    let t = cfg.t;
    let n = cfg.countries.len();
    let mut rng = StreamKey::new(cfg.seed, 0).rng();
    let params = [cfg.esv_us, cfg.esv_eu];
    let half_t = [HalfT::new(cfg.esv_us.nu), HalfT::new(cfg.esv_eu.nu)];
    let tau = [cfg.esv_us.tau2.sqrt(), cfg.esv_eu.tau2.sqrt()];
    let mut s = [params[0].stationary_level(), params[1].stationary_level()];

    let mut sigma = [Vec::with_capacity(t), Vec::with_capacity(t)];
    let mut innov = [Vec::with_capacity(t), Vec::with_capacity(t)];
    let mut delta = [Vec::with_capacity(t), Vec::with_capacity(t)];
    let mut eta = [Vec::with_capacity(t), Vec::with_capacity(t)];
    let mut factor_cols = [Vec::with_capacity(t), Vec::with_capacity(t)];
    let mut country_cols = vec![Vec::with_capacity(t); n];

    for day in 0..t {
        let mut d = [0.0; 2];
        for k in 0..2 {
            let lambda = half_t[k].sample(&mut rng);
            d[k] = lambda * rng.sample::<f64, _>(StandardNormal) * tau[k];
        }
        let e = cfg.chol.apply(d);
        let mut x = [0.0; 2];
        for k in 0..2 {
            let p = &params[k];
            s[k] = (p.sigma0 + p.phi * s[k] + e[k]).max(SIGMA_FLOOR);
            let xi: f64 = rng.sample(StandardNormal);
            x[k] = s[k] * xi;
            sigma[k].push(s[k]);
            innov[k].push(x[k]);
            delta[k].push(d[k]);
            eta[k].push(e[k]);
            factor_cols[k].push(cfg.factor_mean[k] + x[k]);
        }
        for (i, col) in country_cols.iter_mut().enumerate() {
            let mut g2 = cfg.gamma[i][1];
            for r in &cfg.regimes {
                if (r.start..=r.end).contains(&day) {
                    g2 = r.gamma2[i];
                }
            }
            let noise: f64 = rng.sample(StandardNormal);
            col.push(
                cfg.alpha[i]
                    + cfg.b[i][0] * x[0]
                    + cfg.b[i][1] * x[1]
                    + cfg.gamma[i][0] * d[0]
                    + g2 * d[1]
                    + cfg.idio_sd[i] * noise,
            );
        }
    }

    let dates = business_days(cfg.start_date, t);
    let [f_us, f_eu] = factor_cols;
    Ok(JointPanel {
        countries: ReturnPanel {
            dates: dates.clone(),
            columns: cfg.countries.clone(),
            values: country_cols,
        },
        factors: ReturnPanel {
            dates,
            columns: vec!["US".to_string(), "EU".to_string()],
            values: vec![f_us, f_eu],
        },
        sigma,
        factor_innovations: innov,
        delta,
        eta,
    })
}

/// Sample-size independent settings of the grid filter.
#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    /// Tail probability of one transition left beyond the top of the grid.
    pub tail_mass: f64,
    /// Leaked transition mass that aborts the computation.
    pub max_leak: f64,
    /// Points in the tabulated shock survival function.
    pub table_points: usize,
    /// Filtering probabilities below this are not propagated.
    pub prune: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tail_mass: 1e-8,
            max_leak: 1e-6,
            table_points: 20_000,
            prune: 1e-14,
        }
    }
}

/// Exact-up-to-discretization log-likelihood of the volatility model with
/// known mean coefficients.
///
/// Volatility is discretized on nodes uniform in `asinh(sigma / tau)` from
/// the floor up to the level above which a single transition from anywhere
/// on the grid lands with probability below `tail_mass`. The stationary
/// level, where the filter starts, is always a node. Each node owns the
/// interval between the midpoints to its neighbours; the lowest node also
/// owns everything below, which is exactly the mass the floor absorbs.
/// Transition probabilities come from the survival function of the
/// half-t-scaled normal shock.
pub fn grid_filter_oracle(
    x: &[f64],
    params: &EsvParams,
    spec: &MeanModelSpec,
    alpha: (f64, f64),
    grid_size: usize,
) -> Result<f64> {
    grid_filter_oracle_with(x, params, spec, alpha, grid_size, &OracleOptions::default())
}

pub fn grid_filter_oracle_with(
    x: &[f64],
    params: &EsvParams,
    spec: &MeanModelSpec,
    alpha: (f64, f64),
    grid_size: usize,
    opts: &OracleOptions,
) -> Result<f64> {
    grid_filter_oracle_path(x, params, spec, alpha, grid_size, opts).map(|o| o.loglik)
}

/// Log-likelihood and filtered volatility means of the grid filter.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePath {
    pub loglik: f64,
    /// Posterior mean of the volatility on each day.
    pub sigma: Vec<f64>,
}

pub fn grid_filter_oracle_path(
    x: &[f64],
    params: &EsvParams,
    spec: &MeanModelSpec,
    alpha: (f64, f64),
    grid_size: usize,
    opts: &OracleOptions,
) -> Result<OraclePath> {
    params.validate()?;
    if grid_size < 500 {
        return Err(Error::InvalidParams(format!("grid size must be at least 500, got {grid_size}")));
    }
    let shock = ScaleMixtureShock::new(params.nu, params.tau2);
    let q = shock.upper_quantile(opts.tail_mass);
    let start = params.stationary_level();
    let sigma_hi = ((params.sigma0 + q) / (1.0 - params.phi)).max(start);

    let scale = shock.tau();
    let v_lo = (SIGMA_FLOOR / scale).asinh();
    let v_hi = (sigma_hi / scale).asinh();
    let mut nodes: Vec<f64> = (0..grid_size - 1)
        .map(|k| scale * (v_lo + (v_hi - v_lo) * k as f64 / (grid_size - 2) as f64).sinh())
        .collect();
    nodes[0] = SIGMA_FLOOR;
    nodes[grid_size - 2] = sigma_hi;
    let pos = nodes.partition_point(|&s| s < start);
    if nodes.get(pos) != Some(&start) {
        nodes.insert(pos, start);
    }
    let m = nodes.len();
    // Upper boundaries of the cells; the last one is the truncation point.
    let bounds: Vec<f64> = (0..m)
        .map(|j| if j + 1 < m { 0.5 * (nodes[j] + nodes[j + 1]) } else { sigma_hi })
        .collect();
    let table = ShockSfTable::new(&shock, 2.0 * sigma_hi + params.sigma0, opts.table_points);

    // Row i holds the cell probabilities of one transition from node i.
    let mut kernel = vec![0.0; m * m];
    let mut leaks = vec![0.0; m];
    let mut sfs = vec![0.0; m];
    for i in 0..m {
        let centre = params.sigma0 + params.phi * nodes[i];
        for (s, b) in sfs.iter_mut().zip(&bounds) {
            *s = table.sf(b - centre);
        }
        let row = &mut kernel[i * m..(i + 1) * m];
        row[0] = 1.0 - sfs[0];
        for j in 1..m {
            row[j] = (sfs[j - 1] - sfs[j]).max(0.0);
        }
        leaks[i] = sfs[m - 1];
    }

    let mut post = vec![0.0; m];
    post[pos] = 1.0;
    let mut pred = vec![0.0; m];
    let mut loglik = 0.0;
    let mut sigma = Vec::with_capacity(x.len());

    for (t, &xt) in x.iter().enumerate() {
        pred.fill(0.0);
        let mut leak = 0.0;
        for i in 0..m {
            let w = post[i];
            if w < opts.prune {
                continue;
            }
            for (p, k) in pred.iter_mut().zip(&kernel[i * m..(i + 1) * m]) {
                *p += w * k;
            }
            leak += w * leaks[i];
        }
        if leak > opts.max_leak {
            return Err(Error::MassLeak { index: t, mass: leak });
        }
        let mut total = 0.0;
        for j in 0..m {
            let s = nodes[j];
            let r = xt - spec.mean(alpha.0, alpha.1, s);
            let dens = (-0.5 * (LN_2PI + 2.0 * s.ln() + r * r / (s * s))).exp();
            post[j] = pred[j] * dens;
            total += post[j];
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NonFiniteLikelihood { index: t });
        }
        loglik += total.ln();
        let mut mean = 0.0;
        for (p, s) in post.iter_mut().zip(&nodes) {
            *p /= total;
            mean += *p * s;
        }
        sigma.push(mean);
    }
    Ok(OraclePath { loglik, sigma })
}
