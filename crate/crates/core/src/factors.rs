//! Construction of the four-factor regressor panel: market-return
//! innovations and volatility shocks for the US and EU factors, with the EU
//! shock made orthogonal to the US shock.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::parse_date;
use crate::model::FilterOutput;

/// A filter run together with the dates and observations it was run on.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
    pub output: FilterOutput,
}

const FIT_HEADER: [&str; 6] = ["date", "return", "mu", "sigma", "shock", "std_residual"];

impl FactorFit {
    pub fn new(dates: Vec<NaiveDate>, returns: Vec<f64>, output: FilterOutput) -> Result<Self> {
        output.check_lengths()?;
        for len in [dates.len(), returns.len()] {
            if len != output.len() {
                return Err(Error::LengthMismatch {
                    expected: output.len(),
                    found: len,
                });
            }
        }
        Ok(Self { dates, returns, output })
    }

    /// Per-day columns as CSV. The log-likelihood and coefficient estimates
    /// are not part of this file.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(FIT_HEADER)?;
        let o = &self.output;
        for t in 0..self.dates.len() {
            wr.write_record([
                self.dates[t].to_string(),
                self.returns[t].to_string(),
                o.mu[t].to_string(),
                o.sigma[t].to_string(),
                o.shock[t].to_string(),
                o.std_residuals[t].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != FIT_HEADER {
            return Err(Error::Parse {
                line: 1,
                column: "header".to_string(),
                message: format!("expected header {}", FIT_HEADER.join(",")),
            });
        }
        let mut fit = FactorFit {
            dates: Vec::new(),
            returns: Vec::new(),
            output: FilterOutput {
                mu: Vec::new(),
                sigma: Vec::new(),
                shock: Vec::new(),
                loglik: f64::NAN,
                std_residuals: Vec::new(),
                mean_estimates: Vec::new(),
            },
        };
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let date = parse_date(&rec[0]).ok_or_else(|| Error::Parse {
                line,
                column: "date".to_string(),
                message: format!("bad date '{}'", &rec[0]),
            })?;
            let mut vals = [0.0; 5];
            for (j, v) in vals.iter_mut().enumerate() {
                *v = rec[j + 1].parse().map_err(|_| Error::Parse {
                    line,
                    column: header[j + 1].clone(),
                    message: format!("bad number '{}'", &rec[j + 1]),
                })?;
            }
            fit.dates.push(date);
            fit.returns.push(vals[0]);
            fit.output.mu.push(vals[1]);
            fit.output.sigma.push(vals[2]);
            fit.output.shock.push(vals[3]);
            fit.output.std_residuals.push(vals[4]);
        }
        if fit.dates.is_empty() {
            return Err(Error::EmptyFile);
        }
        Ok(fit)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Result of regressing one series on another with an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthogonalization {
    pub residuals: Vec<f64>,
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
}

/// Remove from `eu` its least-squares projection on `us` and a constant.
pub fn orthogonalize_full(eu: &[f64], us: &[f64]) -> Result<Orthogonalization> {
    if eu.len() != us.len() {
        return Err(Error::LengthMismatch {
            expected: us.len(),
            found: eu.len(),
        });
    }
    let n = us.len();
    if n < 3 {
        return Err(Error::SampleTooSmall { needed: 3, found: n });
    }
    let nf = n as f64;
    let mx = us.iter().sum::<f64>() / nf;
    let my = eu.iter().sum::<f64>() / nf;
    let sxx: f64 = us.iter().map(|x| (x - mx) * (x - mx)).sum();
    let scale: f64 = us.iter().map(|x| x * x).sum::<f64>();
    if sxx <= 1e-14 * scale || sxx == 0.0 {
        return Err(Error::DegenerateRegressor);
    }
    let sxy: f64 = us.iter().zip(eu).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = us.iter().zip(eu).map(|(x, y)| y - intercept - slope * x).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let slope_se = (rss / (nf - 2.0) / sxx).sqrt();
    Ok(Orthogonalization {
        residuals,
        intercept,
        slope,
        slope_se,
    })
}

/// Residual of `eu` after regression on `us` (with intercept), and the slope.
pub fn orthogonalize(eu: &[f64], us: &[f64]) -> Result<(Vec<f64>, f64)> {
    let o = orthogonalize_full(eu, us)?;
    Ok((o.residuals, o.slope))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorPanel {
    pub dates: Vec<NaiveDate>,
    pub x_us: Vec<f64>,
    pub x_eu: Vec<f64>,
    pub delta_us: Vec<f64>,
    /// EU volatility shock orthogonal to `delta_us`.
    pub delta_eu: Vec<f64>,
    /// EU volatility shock before orthogonalization.
    pub eta_eu: Vec<f64>,
    pub orth_intercept: f64,
    pub orth_slope: f64,
}

const PANEL_HEADER: [&str; 6] = ["date", "x_us", "x_eu", "delta_us", "delta_eu", "eta_eu"];

/// Slope of `y` on `x` with intercept; zero when `x` is constant.
fn ls_slope(y: &[f64], x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx
}

/// Combine the US and EU factor fits into the regressor panel for the
/// contagion regressions. Both fits must cover exactly `dates`.
pub fn build_factor_panel(us: &FactorFit, eu: &FactorFit, dates: &[NaiveDate]) -> Result<FactorPanel> {
    for (label, fit) in [("US", us), ("EU", eu)] {
        if fit.dates != dates {
            let detail = match fit.dates.iter().zip(dates).position(|(a, b)| a != b) {
                Some(i) => format!("{label} fit has {} where the panel has {}", fit.dates[i], dates[i]),
                None => format!("{label} fit has {} dates, the panel has {}", fit.dates.len(), dates.len()),
            };
            return Err(Error::DateMismatch(detail));
        }
    }
    let innovations = |f: &FactorFit| -> Vec<f64> { f.returns.iter().zip(&f.output.mu).map(|(r, m)| r - m).collect() };
    let delta_us = us.output.shock.clone();
    let eta_eu = eu.output.shock.clone();
    let (delta_eu, orth_intercept, orth_slope) = match orthogonalize_full(&eta_eu, &delta_us) {
        Ok(o) => (o.residuals, o.intercept, o.slope),
        // With no variation in the US shock there is nothing to project out.
        Err(Error::DegenerateRegressor) => {
            let n = eta_eu.len() as f64;
            let m = eta_eu.iter().sum::<f64>() / n;
            (eta_eu.iter().map(|v| v - m).collect(), m, 0.0)
        }
        Err(e) => return Err(e),
    };
    let panel = FactorPanel {
        dates: dates.to_vec(),
        x_us: innovations(us),
        x_eu: innovations(eu),
        delta_us,
        delta_eu,
        eta_eu,
        orth_intercept,
        orth_slope,
    };
    let check = ls_slope(&panel.delta_eu, &panel.delta_us);
    assert!(check.abs() < 1e-8, "orthogonalized shock has slope {check}");
    Ok(panel)
}

impl FactorPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Rows whose dates fall in `[start, end]`.
    pub fn window_mask(&self, start: NaiveDate, end: NaiveDate) -> Vec<bool> {
        self.dates.iter().map(|d| *d >= start && *d <= end).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(PANEL_HEADER)?;
        for t in 0..self.len() {
            wr.write_record([
                self.dates[t].to_string(),
                self.x_us[t].to_string(),
                self.x_eu[t].to_string(),
                self.delta_us[t].to_string(),
                self.delta_eu[t].to_string(),
                self.eta_eu[t].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Read a panel written by [`FactorPanel::write_csv`]. The
    /// orthogonalization coefficients are re-estimated from the columns.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != PANEL_HEADER {
            return Err(Error::Parse {
                line: 1,
                column: "header".to_string(),
                message: format!("expected header {}", PANEL_HEADER.join(",")),
            });
        }
        let mut cols: [Vec<f64>; 5] = Default::default();
        let mut dates = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            dates.push(parse_date(&rec[0]).ok_or_else(|| Error::Parse {
                line,
                column: "date".to_string(),
                message: format!("bad date '{}'", &rec[0]),
            })?);
            for (j, col) in cols.iter_mut().enumerate() {
                col.push(rec[j + 1].parse().map_err(|_| Error::Parse {
                    line,
                    column: header[j + 1].clone(),
                    message: format!("bad number '{}'", &rec[j + 1]),
                })?);
            }
        }
        if dates.is_empty() {
            return Err(Error::EmptyFile);
        }
        let [x_us, x_eu, delta_us, delta_eu, eta_eu] = cols;
        let (orth_intercept, orth_slope) = match orthogonalize_full(&eta_eu, &delta_us) {
            Ok(o) => (o.intercept, o.slope),
            Err(_) => (0.0, 0.0),
        };
        Ok(Self {
            dates,
            x_us,
            x_eu,
            delta_us,
            delta_eu,
            eta_eu,
            orth_intercept,
            orth_slope,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
