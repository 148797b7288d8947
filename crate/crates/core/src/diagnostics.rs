//! Residual moment tests and model-comparison tables.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::halft::norm_sf;
use crate::model::FilterOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentTestResult {
    /// Standardized test statistic, approximately N(0, 1) under the null.
    pub statistic: f64,
    /// Sample skewness, or sample excess kurtosis.
    pub sample_moment: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub n: usize,
}

/// Central moments m2, m3, m4 (population normalization).
fn central_moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

fn check_input(x: &[f64], needed: usize) -> Result<()> {
    if x.len() < needed {
        return Err(Error::SampleTooSmall {
            needed,
            found: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!("residual {i} is not finite")));
    }
    Ok(())
}

fn two_sided(z: f64) -> f64 {
    (2.0 * norm_sf(z.abs())).min(1.0)
}

/// D'Agostino's test of zero skewness: the sample skewness is mapped to an
/// approximately standard normal deviate through a Johnson SU transform.
pub fn dagostino_skewness(residuals: &[f64]) -> Result<MomentTestResult> {
    check_input(residuals, 8)?;
    let n = residuals.len() as f64;
    let (m2, m3, _) = central_moments(residuals);
    let b1 = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let ya = y / alpha;
    let z = delta * (ya + (ya * ya + 1.0).sqrt()).ln();
    Ok(MomentTestResult {
        statistic: z,
        sample_moment: b1,
        p_value: two_sided(z),
        n: residuals.len(),
    })
}

/// Anscombe and Glynn's test of normal kurtosis: the standardized sample
/// kurtosis is mapped to an approximately standard normal deviate through a
/// Wilson-Hilferty cube-root transform.
pub fn anscombe_kurtosis(residuals: &[f64]) -> Result<MomentTestResult> {
    check_input(residuals, 20)?;
    let n = residuals.len() as f64;
    let (m2, _, m4) = central_moments(residuals);
    let b2 = if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 };
    let mean = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
    let x = (b2 - mean) / var.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    let z = (term1 - term2) / (2.0 / (9.0 * a)).sqrt();
    Ok(MomentTestResult {
        statistic: z,
        sample_moment: b2 - 3.0,
        p_value: two_sided(z),
        n: residuals.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientCell {
    pub name: String,
    pub estimate: f64,
    pub t_stat: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub coefficients: Vec<CoefficientCell>,
    pub skewness: MomentTestResult,
    pub kurtosis: MomentTestResult,
    pub loglik: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Tabulate fits of different models to one series.
pub fn model_comparison(fits: &[(String, FilterOutput)]) -> Result<ComparisonTable> {
    let mut reference: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(fits.len());
    for (label, out) in fits {
        out.check_lengths()?;
        let obs = out.reconstruct_observations();
        match &reference {
            None => reference = Some(obs),
            Some(r) => {
                let same = r.len() == obs.len()
                    && r.iter().zip(&obs).all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + a.abs()));
                if !same {
                    return Err(Error::SeriesMismatch(format!("fit '{label}' was estimated on a different series")));
                }
            }
        }
        rows.push(ComparisonRow {
            label: label.clone(),
            coefficients: out
                .mean_estimates
                .iter()
                .map(|e| CoefficientCell {
                    name: e.name.clone(),
                    estimate: e.estimate,
                    t_stat: e.t_stat(),
                })
                .collect(),
            skewness: dagostino_skewness(&out.std_residuals)?,
            kurtosis: anscombe_kurtosis(&out.std_residuals)?,
            loglik: out.loglik,
        });
    }
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    fn coefficient_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for row in &self.rows {
            for c in &row.coefficients {
                if !names.contains(&c.name) {
                    names.push(c.name.clone());
                }
            }
        }
        names
    }

    fn cells(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let names = self.coefficient_names();
        let mut header = vec!["model".to_string()];
        for n in &names {
            header.push(n.clone());
            header.push(format!("t_{n}"));
        }
        header.extend(
            ["skewness", "skew_p", "excess_kurtosis", "kurt_p", "loglik"]
                .iter()
                .map(|s| s.to_string()),
        );
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.label.clone()];
                for n in &names {
                    match r.coefficients.iter().find(|c| &c.name == n) {
                        Some(c) => {
                            cells.push(c.estimate.to_string());
                            cells.push(c.t_stat.map(|t| t.to_string()).unwrap_or_default());
                        }
                        None => {
                            cells.push(String::new());
                            cells.push(String::new());
                        }
                    }
                }
                cells.push(r.skewness.sample_moment.to_string());
                cells.push(r.skewness.p_value.to_string());
                cells.push(r.kurtosis.sample_moment.to_string());
                cells.push(r.kurtosis.p_value.to_string());
                cells.push(r.loglik.to_string());
                cells
            })
            .collect();
        (header, rows)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let (header, rows) = self.cells();
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&header)?;
        for r in rows {
            wr.write_record(&r)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Human-readable table with coefficients scaled by 100 and rounded.
    pub fn to_text(&self) -> String {
        let names = self.coefficient_names();
        let mut header = vec!["model".to_string()];
        for n in &names {
            header.push(format!("{n}x100"));
            header.push("t".to_string());
        }
        header.extend(
            ["skew", "p", "ex.kurt", "p", "loglik"]
                .iter()
                .map(|s| s.to_string()),
        );
        let mut table = vec![header];
        for r in &self.rows {
            let mut cells = vec![r.label.clone()];
            for n in &names {
                match r.coefficients.iter().find(|c| &c.name == n) {
                    Some(c) => {
                        cells.push(format!("{:.1}", 100.0 * c.estimate));
                        cells.push(c.t_stat.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into()));
                    }
                    None => {
                        cells.push("-".into());
                        cells.push("-".into());
                    }
                }
            }
            cells.push(format!("{:.2}", r.skewness.sample_moment));
            cells.push(format!("{:.3}", r.skewness.p_value));
            cells.push(format!("{:.2}", r.kurtosis.sample_moment));
            cells.push(format!("{:.3}", r.kurtosis.p_value));
            cells.push(format!("{:.2}", r.loglik));
            table.push(cells);
        }
        render_aligned(&table)
    }
}

/// Left-align the first column and right-align the rest.
pub fn render_aligned(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| table.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in table {
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                out.push_str("  ");
            }
            if j == 0 {
                let _ = write!(out, "{cell:<w$}", w = widths[j]);
            } else {
                let _ = write!(out, "{cell:>w$}", w = widths[j]);
            }
        }
        out.push('\n');
    }
    out
}
