//! Cross-sectional factor regressions of country returns on market and
//! volatility-shock factors, crisis-window loadings with a partial F-test,
//! and rolling residual correlations.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::factors::FactorPanel;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CovarianceKind {
    /// `s^2 (X'X)^-1` with `s^2 = RSS / (n - k)`.
    #[default]
    Classical,
    /// White's heteroskedasticity-consistent estimator without small-sample
    /// correction.
    Hc0,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub r2: f64,
    pub loglik_gaussian: f64,
    pub rss: f64,
    pub n: usize,
    pub k: usize,
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
}

impl RegressionFit {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.standard_errors[i])
    }

    pub fn t_stat(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.t_stats[i])
    }
}

/// Least squares via a QR decomposition of the design matrix.
///
/// `x` holds one regressor per column; with `intercept` a constant column
/// named `intercept` is prepended. `names` labels the columns of `x`.
pub fn ols(y: &[f64], x: &DMatrix<f64>, names: &[&str], intercept: bool, cov: CovarianceKind) -> Result<RegressionFit> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: x.nrows(),
        });
    }
    if names.len() != x.ncols() {
        return Err(Error::LengthMismatch {
            expected: x.ncols(),
            found: names.len(),
        });
    }
    let mut all_names: Vec<String> = Vec::with_capacity(x.ncols() + 1);
    let design = if intercept {
        all_names.push("intercept".to_string());
        let mut d = DMatrix::from_element(n, x.ncols() + 1, 1.0);
        d.columns_mut(1, x.ncols()).copy_from(x);
        d
    } else {
        x.clone()
    };
    all_names.extend(names.iter().map(|s| s.to_string()));
    let k = design.ncols();
    if n <= k {
        return Err(Error::SampleTooSmall { needed: k + 1, found: n });
    }
    if design.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("regression data contain non-finite values".to_string()));
    }

    let qr = design.clone().qr();
    let r = qr.r();
    let col_norms: Vec<f64> = design.column_iter().map(|c| c.norm()).collect();
    for j in 0..k {
        // A column is redundant when its component orthogonal to the earlier
        // columns is negligible relative to its own length.
        if col_norms[j] == 0.0 || r[(j, j)].abs() <= 1e-10 * col_norms[j] {
            return Err(Error::RankDeficient {
                column: all_names[j].clone(),
            });
        }
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient {
            column: all_names[k - 1].clone(),
        })?;
    let fitted = &design * &beta;
    let resid = &yv - &fitted;
    let rss = resid.norm_squared();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient {
            column: all_names[k - 1].clone(),
        })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let covariance = match cov {
        CovarianceKind::Classical => &xtx_inv * (rss / (n - k) as f64),
        CovarianceKind::Hc0 => {
            let mut meat = DMatrix::zeros(k, k);
            for i in 0..n {
                let row = design.row(i);
                meat += row.transpose() * row * (resid[i] * resid[i]);
            }
            &xtx_inv * meat * &xtx_inv
        }
    };
    let standard_errors: Vec<f64> = (0..k).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let t_stats = coefficients
        .iter()
        .zip(&standard_errors)
        .map(|(b, s)| if *s > 0.0 { b / s } else { f64::NAN })
        .collect();
    let tss = if intercept {
        let m = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    } else {
        yv.norm_squared()
    };
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let nf = n as f64;
    let loglik_gaussian = if rss > 0.0 {
        -0.5 * nf * (LN_2PI + (rss / nf).ln() + 1.0)
    } else {
        f64::INFINITY
    };
    Ok(RegressionFit {
        names: all_names,
        coefficients,
        standard_errors,
        t_stats,
        residuals: resid.iter().copied().collect(),
        fitted: fitted.iter().copied().collect(),
        r2,
        loglik_gaussian,
        rss,
        n,
        k,
        covariance,
    })
}

/// Which volatility regressors enter the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VolBasis {
    /// US shock and the EU shock orthogonalized against it.
    #[default]
    Orthogonal,
    /// US shock and the raw EU shock.
    Raw,
}

pub const STATIC_NAMES: [&str; 4] = ["beta_us", "beta_eu", "gamma_us", "gamma_eu"];

fn check_country(country: &[f64], factors: &FactorPanel) -> Result<()> {
    if country.len() != factors.len() {
        return Err(Error::LengthMismatch {
            expected: factors.len(),
            found: country.len(),
        });
    }
    Ok(())
}

fn static_design(factors: &FactorPanel, basis: VolBasis) -> DMatrix<f64> {
    let eu = match basis {
        VolBasis::Orthogonal => &factors.delta_eu,
        VolBasis::Raw => &factors.eta_eu,
    };
    let n = factors.len();
    let mut x = DMatrix::zeros(n, 4);
    for (j, col) in [&factors.x_us, &factors.x_eu, &factors.delta_us, eu].into_iter().enumerate() {
        x.set_column(j, &DVector::from_column_slice(col));
    }
    x
}

/// Regress a country's returns on an intercept, both market innovations and
/// both volatility shocks.
pub fn fit_static_contagion(country: &[f64], factors: &FactorPanel) -> Result<RegressionFit> {
    fit_static_contagion_with(country, factors, VolBasis::Orthogonal, CovarianceKind::Classical)
}

pub fn fit_static_contagion_with(
    country: &[f64],
    factors: &FactorPanel,
    basis: VolBasis,
    cov: CovarianceKind,
) -> Result<RegressionFit> {
    check_country(country, factors)?;
    ols(country, &static_design(factors, basis), &STATIC_NAMES, true, cov)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrisisWindow {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrisisWindows {
    pub windows: Vec<CrisisWindow>,
}

impl Default for CrisisWindows {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        Self {
            windows: vec![
                CrisisWindow {
                    label: "sep_oct_08".into(),
                    start: d(2008, 9, 1),
                    end: d(2008, 10, 31),
                },
                CrisisWindow {
                    label: "may_10".into(),
                    start: d(2010, 5, 1),
                    end: d(2010, 5, 31),
                },
                CrisisWindow {
                    label: "aug_11".into(),
                    start: d(2011, 8, 1),
                    end: d(2011, 8, 31),
                },
            ],
        }
    }
}

impl CrisisWindows {
    /// Problems with the window list: inverted ranges, duplicate labels and
    /// overlapping pairs.
    pub fn issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        for w in &self.windows {
            if w.end < w.start {
                issues.push(format!("window '{}' ends ({}) before it starts ({})", w.label, w.end, w.start));
            }
        }
        for (i, a) in self.windows.iter().enumerate() {
            for b in &self.windows[i + 1..] {
                if a.label == b.label {
                    issues.push(format!("duplicate window label '{}'", a.label));
                }
                if a.start <= b.end && b.start <= a.end && a.start <= a.end && b.start <= b.end {
                    issues.push(format!("windows '{}' and '{}' overlap", a.label, b.label));
                }
            }
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrisisFit {
    pub fit: RegressionFit,
    pub static_fit: RegressionFit,
    pub f_statistic: f64,
    pub p_value: f64,
    /// Numerator degrees of freedom (number of restrictions).
    pub df_num: usize,
    pub df_den: usize,
}

/// Name of the EU-shock loading outside every crisis window.
pub const CALM_NAME: &str = "gamma_eu_calm";

/// Let the EU volatility loading differ in each crisis window, and test the
/// restriction that all these loadings equal a single static loading.
pub fn fit_crisis_contagion(country: &[f64], factors: &FactorPanel, windows: &CrisisWindows) -> Result<CrisisFit> {
    fit_crisis_contagion_with(country, factors, windows, CovarianceKind::Classical)
}

pub fn fit_crisis_contagion_with(
    country: &[f64],
    factors: &FactorPanel,
    windows: &CrisisWindows,
    cov: CovarianceKind,
) -> Result<CrisisFit> {
    check_country(country, factors)?;
    windows.validate()?;
    let n = factors.len();
    let masks: Vec<Vec<bool>> = windows
        .windows
        .iter()
        .map(|w| factors.window_mask(w.start, w.end))
        .collect();
    for (w, m) in windows.windows.iter().zip(&masks) {
        if !m.iter().any(|b| *b) {
            return Err(Error::EmptyWindow { label: w.label.clone() });
        }
    }
    let q = windows.windows.len();
    let mut x = DMatrix::zeros(n, 4 + q);
    x.set_column(0, &DVector::from_column_slice(&factors.x_us));
    x.set_column(1, &DVector::from_column_slice(&factors.x_eu));
    x.set_column(2, &DVector::from_column_slice(&factors.delta_us));
    for t in 0..n {
        let d = factors.delta_eu[t];
        match masks.iter().position(|m| m[t]) {
            Some(j) => x[(t, 4 + j)] = d,
            None => x[(t, 3)] = d,
        }
    }
    let window_names: Vec<String> = windows.windows.iter().map(|w| format!("gamma_eu_{}", w.label)).collect();
    let mut names: Vec<&str> = vec!["beta_us", "beta_eu", "gamma_us", CALM_NAME];
    names.extend(window_names.iter().map(String::as_str));
    let fit = ols(country, &x, &names, true, cov)?;
    let static_fit = fit_static_contagion_with(country, factors, VolBasis::Orthogonal, cov)?;
    let df_den = fit.n - fit.k;
    let f_statistic = ((static_fit.rss - fit.rss).max(0.0) / q as f64) / (fit.rss / df_den as f64);
    let p_value = if q == 0 {
        1.0
    } else {
        let dist = FisherSnedecor::new(q as f64, df_den as f64)
            .map_err(|e| Error::InvalidParams(format!("F distribution: {e}")))?;
        dist.sf(f_statistic)
    };
    Ok(CrisisFit {
        fit,
        static_fit,
        f_statistic,
        p_value,
        df_num: q,
        df_den,
    })
}

/// Pearson correlation of the trailing `window` observations ending at each
/// day. Days before the first full window, and windows where either series
/// is constant, have no value.
pub fn rolling_residual_correlation(a: &[f64], b: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    if window < 3 {
        return Err(Error::InvalidParams(format!("window must be at least 3, got {window}")));
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < window {
        return Err(Error::SampleTooSmall {
            needed: window,
            found: a.len(),
        });
    }
    let mut out = vec![None; window - 1];
    for end in window..=a.len() {
        let (xa, xb) = (&a[end - window..end], &b[end - window..end]);
        let w = window as f64;
        let ma = xa.iter().sum::<f64>() / w;
        let mb = xb.iter().sum::<f64>() / w;
        let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
        for (x, y) in xa.iter().zip(xb) {
            let (da, db) = (x - ma, y - mb);
            saa += da * da;
            sbb += db * db;
            sab += da * db;
        }
        let denom = (saa * sbb).sqrt();
        out.push(if denom > 0.0 {
            Some((sab / denom).clamp(-1.0, 1.0))
        } else {
            None
        });
    }
    Ok(out)
}

/// Correlation of two assets' returns implied by a single-factor model when
/// the factor is observed with noise: loadings `beta_i`, `beta_j`,
/// idiosyncratic variances `sigma_i2`, `sigma_j2`, factor variance `sigma2`.
pub fn capm_bias_demo(beta_i: f64, beta_j: f64, sigma_i2: f64, sigma_j2: f64, sigma2: f64) -> Result<f64> {
    if !(sigma_i2 > 0.0 && sigma_j2 > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidParams("variances must be positive".to_string()));
    }
    Ok(beta_i * beta_j / ((beta_i * beta_i + sigma_i2 / sigma2) * (beta_j * beta_j + sigma_j2 / sigma2)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn exact_fit_without_intercept() {
        let x = [1.0, 2.0, -1.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let f = ols(&y, &col(&x), &["x"], false, CovarianceKind::Classical).unwrap();
        assert!((f.coefficients[0] - 3.0).abs() < 1e-12);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_solved_normal_equations() {
        // y = a + b x on six points; normal equations solved by hand:
        // sum x = 15, sum x^2 = 55, sum y = 12.5, sum xy = 40.5, n = 6
        // b = (6*40.5 - 15*12.5) / (6*55 - 225) = 55.5 / 105
        // a = (12.5 - 15 b) / 6
        let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 1.5, 1.0, 2.5, 3.0, 3.5];
        let f = ols(&y, &col(&x), &["x"], true, CovarianceKind::Classical).unwrap();
        let b = 55.5 / 105.0;
        let a = (12.5 - 15.0 * b) / 6.0;
        assert!((f.coefficients[0] - a).abs() < 1e-10);
        assert!((f.coefficients[1] - b).abs() < 1e-10);
        assert_eq!(f.names, vec!["intercept", "x"]);
        // Residuals are orthogonal to the regressors.
        let dot: f64 = f.residuals.iter().zip(&x).map(|(r, v)| r * v).sum();
        assert!(dot.abs() < 1e-10 && f.residuals.iter().sum::<f64>().abs() < 1e-10);
        for j in 0..2 {
            assert!((f.t_stats[j] - f.coefficients[j] / f.standard_errors[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_names_the_column() {
        let n = 10;
        let mut x = DMatrix::zeros(n, 3);
        for i in 0..n {
            x[(i, 0)] = i as f64;
            x[(i, 1)] = (i as f64).sin();
            x[(i, 2)] = 2.0 * i as f64 - (i as f64).sin();
        }
        let y: Vec<f64> = (0..n).map(|i| i as f64 * 0.3).collect();
        let err = ols(&y, &x, &["a", "b", "c"], true, CovarianceKind::Classical).unwrap_err();
        match err {
            Error::RankDeficient { column } => assert_eq!(column, "c"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn null_design() {
        let mut rng = StreamKey::new(4, 0).rng();
        let n = 2000;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for cov in [CovarianceKind::Classical, CovarianceKind::Hc0] {
            let f = ols(&y, &x, &["a", "b", "c"], true, cov).unwrap();
            assert!(f.r2 < 0.01);
            assert!(f.t_stats.iter().all(|t| t.abs() < 3.5));
        }
    }

    fn panel(n: usize, seed: u64) -> FactorPanel {
        let mut rng = StreamKey::new(seed, 0).rng();
        let mut g = || -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let (x_us, x_eu, delta_us, noise) = (g(), g(), g(), g());
        let eta_eu: Vec<f64> = delta_us.iter().zip(&noise).map(|(a, b)| 0.6 * a + b).collect();
        let o = crate::factors::orthogonalize_full(&eta_eu, &delta_us).unwrap();
        FactorPanel {
            dates: crate::simulate::business_days(NaiveDate::from_ymd_opt(2008, 1, 1).unwrap(), n),
            x_us,
            x_eu,
            delta_us,
            delta_eu: o.residuals,
            eta_eu,
            orth_intercept: o.intercept,
            orth_slope: o.slope,
        }
    }

    #[test]
    fn static_recovery_and_reparameterization() {
        let p = panel(1500, 1);
        let exact: Vec<f64> = (0..p.len())
            .map(|t| 0.02 + 0.1 * p.x_us[t] + 0.9 * p.x_eu[t] + 0.4 * p.delta_us[t] - 0.2 * p.delta_eu[t])
            .collect();
        let f = fit_static_contagion(&exact, &p).unwrap();
        for (name, v) in [("intercept", 0.02), ("beta_us", 0.1), ("beta_eu", 0.9), ("gamma_us", 0.4), ("gamma_eu", -0.2)] {
            assert!((f.coefficient(name).unwrap() - v).abs() < 1e-8, "{name}");
        }
        let mut rng = StreamKey::new(9, 0).rng();
        let y: Vec<f64> = exact.iter().map(|v| v + rng.sample::<f64, _>(StandardNormal)).collect();
        let a = fit_static_contagion(&y, &p).unwrap();
        let b = fit_static_contagion_with(&y, &p, VolBasis::Raw, CovarianceKind::Classical).unwrap();
        for (u, v) in a.fitted.iter().zip(&b.fitted) {
            assert!((u - v).abs() < 1e-8);
        }
        // Only the US loading changes, by the orthogonalization slope.
        let g_eu = a.coefficient("gamma_eu").unwrap();
        assert!((b.coefficient("gamma_eu").unwrap() - g_eu).abs() < 1e-8);
        assert!((b.coefficient("gamma_us").unwrap() - (a.coefficient("gamma_us").unwrap() - g_eu * p.orth_slope)).abs() < 1e-8);
    }

    fn windows_for(p: &FactorPanel) -> CrisisWindows {
        CrisisWindows {
            windows: vec![
                CrisisWindow {
                    label: "w1".into(),
                    start: p.dates[100],
                    end: p.dates[160],
                },
                CrisisWindow {
                    label: "w2".into(),
                    start: p.dates[400],
                    end: p.dates[430],
                },
            ],
        }
    }

    #[test]
    fn crisis_fit_nests_static() {
        let p = panel(600, 2);
        let mut rng = StreamKey::new(3, 0).rng();
        let y: Vec<f64> = (0..p.len())
            .map(|t| 0.5 * p.x_eu[t] + 0.3 * p.delta_eu[t] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let c = fit_crisis_contagion(&y, &p, &windows_for(&p)).unwrap();
        assert!(c.fit.rss <= c.static_fit.rss);
        assert!(c.f_statistic >= 0.0);
        assert!((0.0..=1.0).contains(&c.p_value));
        assert_eq!((c.df_num, c.df_den), (2, 600 - 7));
        assert!(c.fit.index_of("gamma_eu_w2").is_some());
    }

    #[test]
    fn crisis_detects_sign_flip() {
        let p = panel(800, 5);
        let w = windows_for(&p);
        let mut rng = StreamKey::new(6, 0).rng();
        let y: Vec<f64> = (0..p.len())
            .map(|t| {
                let g = if (100..=160).contains(&t) { -1.5 } else { 0.5 };
                g * p.delta_eu[t] + 0.5 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let c = fit_crisis_contagion(&y, &p, &w).unwrap();
        assert!(c.p_value < 1e-6);
        assert!(c.fit.coefficient("gamma_eu_w1").unwrap() < -1.0);
    }

    #[test]
    fn window_validation() {
        let p = panel(500, 1);
        let mut w = windows_for(&p);
        w.windows[1].start = p.dates[150];
        let issues = w.issues();
        assert_eq!(issues.len(), 1);
        assert!(issues[0].contains("w1") && issues[0].contains("w2"));
        let empty = CrisisWindows {
            windows: vec![CrisisWindow {
                label: "later".into(),
                start: NaiveDate::from_ymd_opt(2030, 1, 1).unwrap(),
                end: NaiveDate::from_ymd_opt(2030, 2, 1).unwrap(),
            }],
        };
        assert!(matches!(
            fit_crisis_contagion(&p.x_us, &p, &empty),
            Err(Error::EmptyWindow { .. })
        ));
        let mut inverted = windows_for(&p);
        inverted.windows[0].end = p.dates[10];
        assert!(!inverted.issues().is_empty());
        assert!(CrisisWindows::default().issues().is_empty());
    }

    #[test]
    fn rolling_correlation_basics() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7).sin()).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let same = rolling_residual_correlation(&a, &a, 42).unwrap();
        assert!(same[..41].iter().all(Option::is_none));
        assert!(same[41..].iter().all(|c| (c.unwrap() - 1.0).abs() < 1e-12));
        let anti = rolling_residual_correlation(&a, &neg, 42).unwrap();
        assert!(anti[41..].iter().all(|c| (c.unwrap() + 1.0).abs() < 1e-12));
        let flat = vec![1.0; 100];
        assert!(rolling_residual_correlation(&a, &flat, 10).unwrap().iter().all(Option::is_none));
        assert!(rolling_residual_correlation(&a, &a, 2).is_err());
        assert!(rolling_residual_correlation(&a[..5], &a[..5], 10).is_err());
    }

    #[test]
    fn independent_rolling_correlation_small() {
        let mut rng = StreamKey::new(12, 0).rng();
        let a: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let c = rolling_residual_correlation(&a, &b, 42).unwrap();
        let vals: Vec<f64> = c.into_iter().flatten().collect();
        let mean_abs = vals.iter().map(|v| v.abs()).sum::<f64>() / vals.len() as f64;
        assert!(mean_abs < 0.25);
        assert!(vals.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn capm_bias_formula() {
        assert!((capm_bias_demo(1.0, 1.0, 2.0, 2.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        let mut last = 0.0;
        for s in [1.0, 10.0, 100.0, 1e4, 1e8] {
            let c = capm_bias_demo(0.8, 1.2, 1.0, 2.0, s).unwrap();
            assert!(c > last);
            last = c;
        }
        assert!((last - 1.0).abs() < 1e-6);
        assert!(capm_bias_demo(1.0, 1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn capm_bias_monte_carlo() {
        // Residuals from a regression on the factor's expected return (a
        // constant here) still carry the factor innovation, so their
        // correlation is that of the raw returns.
        let (bi, bj, si2, sj2, s2): (f64, f64, f64, f64, f64) = (0.9, 1.1, 1.0, 1.5, 2.0);
        let mut rng = StreamKey::new(77, 0).rng();
        let n = 100_000;
        let (mut yi, mut yj) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let f = s2.sqrt() * rng.sample::<f64, _>(StandardNormal);
            yi.push(bi * f + si2.sqrt() * rng.sample::<f64, _>(StandardNormal));
            yj.push(bj * f + sj2.sqrt() * rng.sample::<f64, _>(StandardNormal));
        }
        let c = rolling_residual_correlation(&yi, &yj, n).unwrap()[n - 1].unwrap();
        let expected = capm_bias_demo(bi, bj, si2, sj2, s2).unwrap();
        assert!((c - expected).abs() < 0.02, "{c} vs {expected}");
    }
}
