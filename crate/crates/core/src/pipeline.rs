//! Two-stage estimation from a single configuration file.
//!
//! Stage 1 loads and aligns the data, fits a volatility model to the US and
//! EU market factors and builds the factor panel. Stage 2 runs the static
//! and crisis-window regressions for every country and computes rolling
//! residual correlations. Each stage writes its artifacts to the output
//! directory; stage 2 reads stage 1's artifacts from disk, so it can be
//! re-run on its own.
//!
//! Configuration:
//!
//! ```text
//! [data]
//! returns = panel.csv          # excess returns in percent (and optional prices)
//! format = wide                # wide | long
//! price_columns = VGK, EWG     # columns of `returns` holding price levels
//! rf_column = RF               # risk-free column used to convert prices
//! french = F-F_Research_Data_Factors_daily.CSV
//! us_column = Mkt-RF
//! eu_column = VGK
//! countries = EWG, EWQ         # default: every other return column
//!
//! [model]
//! us_vol = esv                 # garch | sv | esv
//! eu_vol = esv
//! us_mean = 1a
//! eu_mean = 1a
//! nu = 2
//! particles = 10000
//! seed = 42
//! compare = garch:1a, esv:3    # extra rows of the model comparison tables
//!
//! [grid]
//! sigma0 = ...
//! phi = ...
//! tau2 = ...
//!
//! [windows]
//! may_10 = 2010-05-01, 2010-05-31
//!
//! [output]
//! dir = out
//! rolling_window = 42
//! robust_se = false
//! ```
//!
//! Relative paths are resolved against the directory of the configuration
//! file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{grid_from_doc, windows_from_doc, KvDoc};
use crate::contagion::{
    fit_crisis_contagion_with, fit_static_contagion_with, rolling_residual_correlation, CovarianceKind, CrisisFit,
    CrisisWindows, RegressionFit, VolBasis,
};
use crate::diagnostics::{model_comparison, ComparisonTable};
use crate::error::{Error, Result};
use crate::esv::{grid_search_with, EsvFilterOptions, EsvParams, GridPointResult, GridSpec};
use crate::factors::{build_factor_panel, FactorFit, FactorPanel};
use crate::garch::{garch_fit, GarchFitOptions, GarchParams};
use crate::ingest::{
    align, load_french_daily, load_series, prices_to_excess_returns, AlignPolicy, CsvFormat, LoadOptions,
    RawSeries, ReturnPanel, SeriesKind,
};
use crate::model::{FilterOutput, MeanEstimate, MeanModelSpec};
use crate::rng::substream_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VolModel {
    Garch,
    /// Gaussian stochastic volatility.
    Sv,
    /// Heavy-tailed stochastic volatility.
    Esv,
}

impl VolModel {
    pub fn is_stochastic(self) -> bool {
        matches!(self, VolModel::Sv | VolModel::Esv)
    }
}

impl FromStr for VolModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "garch" | "garch-am" => Ok(VolModel::Garch),
            "sv" => Ok(VolModel::Sv),
            "esv" => Ok(VolModel::Esv),
            other => Err(Error::InvalidParams(format!("unknown volatility model '{other}'"))),
        }
    }
}

impl fmt::Display for VolModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VolModel::Garch => "garch",
            VolModel::Sv => "sv",
            VolModel::Esv => "esv",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSources {
    pub returns: Option<PathBuf>,
    pub format: CsvFormat,
    pub price_columns: Vec<String>,
    pub rf_column: String,
    pub french: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data: DataSources,
    pub us_column: String,
    pub eu_column: String,
    pub countries: Option<Vec<String>>,
    pub us_vol: VolModel,
    pub eu_vol: VolModel,
    pub us_mean: MeanModelSpec,
    pub eu_mean: MeanModelSpec,
    pub nu: f64,
    pub grid: GridSpec,
    pub particles: usize,
    pub seed: Option<u64>,
    pub compare: Vec<(VolModel, MeanModelSpec)>,
    pub windows: CrisisWindows,
    pub out_dir: PathBuf,
    pub rolling_window: usize,
    pub covariance: CovarianceKind,
}

impl PipelineConfig {
    /// Settings from a parsed document; relative paths are joined to `base`.
    pub fn from_doc(doc: &KvDoc, base: &Path) -> Result<Self> {
        let empty = crate::config::Section {
            name: String::new(),
            entries: Vec::new(),
        };
        let data = doc.section("data").unwrap_or(&empty);
        let model = doc.section("model").unwrap_or(&empty);
        let output = doc.section("output").unwrap_or(&empty);
        let path = |s: &crate::config::Section, key: &str| s.get(key).map(|e| base.join(&e.value));
        let french = path(data, "french");
        let compare = match model.get("compare") {
            None => Vec::new(),
            Some(e) => e
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|item| {
                    let (vol, spec) = item.split_once(':').ok_or_else(|| Error::Parse {
                        line: e.line,
                        column: "compare".to_string(),
                        message: format!("expected 'model:spec', got '{item}'"),
                    })?;
                    Ok((vol.parse()?, spec.parse()?))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let default_us = if french.is_some() { "Mkt-RF" } else { "US" };
        Ok(Self {
            data: DataSources {
                returns: path(data, "returns"),
                format: data.parsed("format")?.unwrap_or(CsvFormat::Wide),
                price_columns: data.list("price_columns")?.unwrap_or_default(),
                rf_column: data.parsed("rf_column")?.unwrap_or_else(|| "RF".to_string()),
                french,
            },
            us_column: data.parsed("us_column")?.unwrap_or_else(|| default_us.to_string()),
            eu_column: data.parsed("eu_column")?.unwrap_or_else(|| "EU".to_string()),
            countries: data.list("countries")?,
            us_vol: model.parsed("us_vol")?.unwrap_or(VolModel::Esv),
            eu_vol: model.parsed("eu_vol")?.unwrap_or(VolModel::Esv),
            us_mean: model.parsed("us_mean")?.unwrap_or_else(|| "1a".parse().expect("valid spec")),
            eu_mean: model.parsed("eu_mean")?.unwrap_or_else(|| "1a".parse().expect("valid spec")),
            nu: model.parsed("nu")?.unwrap_or(2.0),
            grid: grid_from_doc(doc)?.unwrap_or_default(),
            particles: model.parsed("particles")?.unwrap_or(10_000),
            seed: model.parsed("seed")?,
            compare,
            windows: windows_from_doc(doc)?.unwrap_or_default(),
            out_dir: path(output, "dir").unwrap_or_else(|| base.join("out")),
            rolling_window: output.parsed("rolling_window")?.unwrap_or(42),
            covariance: if output.parsed::<bool>("robust_se")?.unwrap_or(false) {
                CovarianceKind::Hc0
            } else {
                CovarianceKind::Classical
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc = KvDoc::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_doc(&doc, base)
    }
}

/// Problems that make the configuration unusable; empty when it is valid.
pub fn validate_config(cfg: &PipelineConfig) -> Vec<String> {
    let mut issues = Vec::new();
    if cfg.data.returns.is_none() && cfg.data.french.is_none() {
        issues.push("no data source: set [data] returns and/or french".to_string());
    }
    for p in [&cfg.data.returns, &cfg.data.french].into_iter().flatten() {
        if !p.is_file() {
            issues.push(format!("file not found: {}", p.display()));
        }
    }
    if cfg.us_column == cfg.eu_column {
        issues.push("us_column and eu_column must differ".to_string());
    }
    let stochastic = cfg.us_vol.is_stochastic() || cfg.eu_vol.is_stochastic()
        || cfg.compare.iter().any(|(v, _)| v.is_stochastic());
    if stochastic {
        if cfg.seed.is_none() {
            issues.push("a seed is required when a stochastic-volatility model is selected".to_string());
        }
        if cfg.particles < 100 {
            issues.push(format!("particles must be at least 100, got {}", cfg.particles));
        }
        if let Err(e) = cfg.grid.validate(cfg.nu) {
            issues.push(format!("grid: {e}"));
        }
    }
    if !(cfg.nu >= 1.0) {
        issues.push(format!("nu must be at least 1, got {}", cfg.nu));
    }
    if cfg.rolling_window < 3 {
        issues.push(format!("rolling_window must be at least 3, got {}", cfg.rolling_window));
    }
    issues.extend(cfg.windows.issues());
    issues
}

/// Summary of one factor's volatility fit, for JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub label: String,
    pub model: VolModel,
    pub mean_spec: String,
    pub loglik: f64,
    pub estimates: Vec<MeanEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub garch_params: Option<GarchParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub garch_std_errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub esv_params: Option<EsvParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub surface: Vec<GridPointResult>,
    /// How the reported t-statistics of the mean coefficients are built.
    pub t_stat_convention: String,
}

/// Fit one volatility model to a factor series.
pub fn fit_factor(
    x: &[f64],
    vol: VolModel,
    spec: &MeanModelSpec,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(FilterOutput, FitSummary)> {
    match vol {
        VolModel::Garch => {
            let fit = garch_fit(x, spec, None, &GarchFitOptions::default())?;
            let mut estimates = fit.output.mean_estimates.clone();
            if let Some(se) = &fit.std_errors {
                for e in estimates.iter_mut() {
                    if let Some(i) = fit.names.iter().position(|n| *n == e.name) {
                        e.std_error = Some(se[i]);
                    }
                }
            }
            let summary = FitSummary {
                label: String::new(),
                model: vol,
                mean_spec: spec.label().to_string(),
                loglik: fit.output.loglik,
                estimates: estimates.clone(),
                garch_params: Some(fit.params),
                garch_std_errors: fit.std_errors.clone(),
                esv_params: None,
                particles: None,
                seed: None,
                warnings: fit.warnings.clone(),
                surface: Vec::new(),
                t_stat_convention: "estimate / asymptotic standard error from the numerical Hessian".to_string(),
            };
            let mut output = fit.output;
            output.mean_estimates = estimates;
            Ok((output, summary))
        }
        VolModel::Sv | VolModel::Esv => {
            let nu = if vol == VolModel::Sv { f64::INFINITY } else { cfg.nu };
            let opts = EsvFilterOptions::new(cfg.particles, seed);
            let r = grid_search_with(x, &cfg.grid, spec, nu, &opts)?;
            let failed = r.surface.iter().filter(|p| p.failure.is_some()).count();
            let mut warnings = Vec::new();
            if failed > 0 {
                warnings.push(format!("{failed} grid points failed numerically and were scored as -inf"));
            }
            if let Some(idx) = cfg.grid.indices_of(&r.best) {
                let axes = [
                    ("sigma0", cfg.grid.sigma0_values.len()),
                    ("phi", cfg.grid.phi_values.len()),
                    ("tau2", cfg.grid.tau2_values.len()),
                ];
                for ((name, len), i) in axes.iter().zip(idx) {
                    if *len > 1 && (i == 0 || i + 1 == *len) {
                        warnings.push(format!("selected {name} lies on the edge of the grid"));
                    }
                }
            }
            let summary = FitSummary {
                label: String::new(),
                model: vol,
                mean_spec: spec.label().to_string(),
                loglik: r.output.loglik,
                estimates: r.output.mean_estimates.clone(),
                garch_params: None,
                garch_std_errors: None,
                esv_params: Some(r.best),
                particles: Some(cfg.particles),
                seed: Some(seed),
                warnings,
                surface: r.surface,
                t_stat_convention: "posterior mean / posterior standard deviation".to_string(),
            };
            Ok((r.output, summary))
        }
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name.to_string(),
            source: Box::new(other),
        },
    })
}

/// Load every configured source and align the needed columns.
pub fn load_panel(cfg: &PipelineConfig) -> Result<ReturnPanel> {
    let mut series: Vec<RawSeries> = Vec::new();
    let mut rf: Option<RawSeries> = None;
    if let Some(p) = &cfg.data.french {
        for s in load_french_daily(p)? {
            match s.kind {
                SeriesKind::RiskFreeRate => rf = Some(s),
                _ if s.ticker == cfg.us_column => series.push(s),
                _ => {}
            }
        }
    }
    if let Some(p) = &cfg.data.returns {
        let opts = LoadOptions {
            rf_column: Some(cfg.data.rf_column.clone()),
            price_columns: cfg.data.price_columns.clone(),
            columns: None,
        };
        let mut prices = Vec::new();
        for s in load_series(p, cfg.data.format, &opts)? {
            match s.kind {
                SeriesKind::RiskFreeRate => {
                    if rf.is_none() {
                        rf = Some(s)
                    }
                }
                SeriesKind::Price => prices.push(s),
                SeriesKind::Return => series.push(s),
            }
        }
        if !prices.is_empty() {
            let rf = rf.as_ref().ok_or_else(|| {
                Error::InvalidConfig(vec!["price columns need a risk-free series (rf_column or french)".to_string()])
            })?;
            for p in &prices {
                series.push(prices_to_excess_returns(p, rf)?);
            }
        }
    }
    let available: Vec<String> = series.iter().map(|s| s.ticker.clone()).collect();
    let countries: Vec<String> = match &cfg.countries {
        Some(c) => c.clone(),
        None => available
            .iter()
            .filter(|t| **t != cfg.us_column && **t != cfg.eu_column)
            .cloned()
            .collect(),
    };
    let mut wanted = vec![cfg.us_column.clone(), cfg.eu_column.clone()];
    wanted.extend(countries);
    let mut missing = Vec::new();
    let mut chosen = Vec::new();
    for w in &wanted {
        match series.iter().find(|s| &s.ticker == w) {
            Some(s) => chosen.push(s.clone()),
            None => missing.push(format!("series '{w}' not found in the data")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidConfig(missing));
    }
    if chosen.len() < 3 {
        return Err(Error::InvalidConfig(vec!["at least one country series is required".to_string()]));
    }
    align(&chosen, AlignPolicy::Intersect)
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Manifest {
    pub version: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub notes: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// File names written by each stage, relative to the output directory.
pub const STAGE1_FILES: [&str; 9] = [
    "panel.csv",
    "fit_us.csv",
    "fit_eu.csv",
    "fit_us.json",
    "fit_eu.json",
    "factors.csv",
    "table2_us.csv",
    "table2_eu.csv",
    "table2.txt",
];
pub const STAGE2_FILES: [&str; 5] = [
    "table3.csv",
    "table4.csv",
    "contagion.json",
    "rolling_corr.csv",
    "contagion.txt",
];

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn save_table(table: &ComparisonTable, path: &Path) -> Result<()> {
    table.write_csv(std::fs::File::create(path)?)
}

/// Fit both factors, build the factor panel, write stage-1 artifacts.
pub fn run_stage1(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.out_dir;
    let panel = load_panel(cfg)?;
    panel.save(&out.join("panel.csv"))?;
    let seed = cfg.seed.unwrap_or(0);
    let jobs: Vec<(&str, &str, VolModel, MeanModelSpec)> = vec![
        ("us", cfg.us_column.as_str(), cfg.us_vol, cfg.us_mean),
        ("eu", cfg.eu_column.as_str(), cfg.eu_vol, cfg.eu_mean),
    ];
    let fitted: Vec<Result<(FactorFit, FitSummary, ComparisonTable)>> = jobs
        .par_iter()
        .map(|(tag, column, vol, spec)| {
            let x = panel.column(column).expect("column present after alignment").to_vec();
            let fit_seed = substream_seed(seed, tag);
            let (output, mut summary) = fit_factor(&x, *vol, spec, cfg, fit_seed)?;
            summary.label = format!("{column} {vol} {spec}");
            let mut rows = vec![(summary.label.clone(), output.clone())];
            for (k, (v, s)) in cfg.compare.iter().enumerate() {
                if (v, s) == (vol, spec) {
                    continue;
                }
                let (o, _) = fit_factor(&x, *v, s, cfg, substream_seed(fit_seed, &format!("compare{k}")))?;
                rows.push((format!("{column} {v} {s}"), o));
            }
            let table = model_comparison(&rows)?;
            Ok((FactorFit::new(panel.dates.clone(), x, output)?, summary, table))
        })
        .collect();
    let mut text = String::new();
    let mut fits = Vec::new();
    for ((tag, ..), r) in jobs.iter().zip(fitted) {
        let (fit, summary, table) = r?;
        fit.save(&out.join(format!("fit_{tag}.csv")))?;
        write_json(&out.join(format!("fit_{tag}.json")), &summary)?;
        save_table(&table, &out.join(format!("table2_{tag}.csv")))?;
        text.push_str(&table.to_text());
        text.push('\n');
        fits.push(fit);
    }
    std::fs::write(out.join("table2.txt"), text)?;
    let factors = build_factor_panel(&fits[0], &fits[1], &panel.dates)?;
    factors.save(&out.join("factors.csv"))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CountryResult {
    pub country: String,
    pub static_fit: RegressionFit,
    pub crisis: CrisisFit,
}

#[derive(Debug, Clone, Serialize)]
struct ContagionReport<'a> {
    orth_intercept: f64,
    orth_slope: f64,
    standardized_shocks: bool,
    covariance: CovarianceKind,
    windows: &'a CrisisWindows,
    countries: &'a [CountryResult],
}

/// Static and crisis regressions for every country in the panel.
pub fn fit_countries(
    panel: &ReturnPanel,
    factors: &FactorPanel,
    countries: &[String],
    windows: &CrisisWindows,
    cov: CovarianceKind,
) -> Result<Vec<CountryResult>> {
    if panel.dates != factors.dates {
        return Err(Error::DateMismatch("country panel and factor panel cover different dates".to_string()));
    }
    countries
        .par_iter()
        .map(|c| {
            let y = panel
                .column(c)
                .ok_or_else(|| Error::InvalidConfig(vec![format!("country '{c}' missing from panel")]))?;
            let static_fit = fit_static_contagion_with(y, factors, VolBasis::Orthogonal, cov)?;
            let crisis = fit_crisis_contagion_with(y, factors, windows, cov)?;
            Ok(CountryResult {
                country: c.clone(),
                static_fit,
                crisis,
            })
        })
        .collect()
}

fn coefficient_table(results: &[CountryResult], pick: impl Fn(&CountryResult) -> &RegressionFit, extra: &[&str]) -> Vec<Vec<String>> {
    let names = pick(&results[0]).names.clone();
    let mut header = vec!["country".to_string()];
    for n in &names {
        header.push(n.clone());
        header.push(format!("t_{n}"));
    }
    header.push("r2".to_string());
    header.extend(extra.iter().map(|s| s.to_string()));
    let mut rows = vec![header];
    for r in results {
        let f = pick(r);
        let mut row = vec![r.country.clone()];
        for j in 0..f.names.len() {
            row.push(f.coefficients[j].to_string());
            row.push(f.t_stats[j].to_string());
        }
        row.push(f.r2.to_string());
        if !extra.is_empty() {
            row.push(r.crisis.f_statistic.to_string());
            row.push(r.crisis.p_value.to_string());
        }
        rows.push(row);
    }
    rows
}

fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn contagion_text(results: &[CountryResult]) -> String {
    let mut table = vec![vec![
        "country".to_string(),
        "beta_us".into(),
        "beta_eu".into(),
        "gamma_us".into(),
        "gamma_eu".into(),
        "p_F".into(),
    ]];
    for r in results {
        let f = &r.static_fit;
        let mut row = vec![r.country.clone()];
        for n in ["beta_us", "beta_eu", "gamma_us", "gamma_eu"] {
            let (b, t) = (f.coefficient(n).unwrap_or(f64::NAN), f.t_stat(n).unwrap_or(f64::NAN));
            row.push(format!("{b:.3} [{t:.2}]"));
        }
        row.push(format!("{:.3}", r.crisis.p_value));
        table.push(row);
    }
    crate::diagnostics::render_aligned(&table)
}

/// Regressions and rolling correlations from stage-1 artifacts.
pub fn run_stage2(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.out_dir;
    let panel = ReturnPanel::load(&out.join("panel.csv"))?;
    let factors = FactorPanel::load(&out.join("factors.csv"))?;
    let countries: Vec<String> = panel
        .columns
        .iter()
        .filter(|c| **c != cfg.us_column && **c != cfg.eu_column)
        .cloned()
        .collect();
    write_contagion_outputs(out, &panel, &factors, &countries, &cfg.windows, cfg.covariance, cfg.rolling_window)?;
    Ok(())
}

/// Fit every country and write `table3.csv`, `table4.csv`,
/// `contagion.json`, `contagion.txt` and `rolling_corr.csv` to `out`.
pub fn write_contagion_outputs(
    out: &Path,
    panel: &ReturnPanel,
    factors: &FactorPanel,
    countries: &[String],
    windows: &CrisisWindows,
    cov: CovarianceKind,
    rolling_window: usize,
) -> Result<Vec<CountryResult>> {
    if countries.is_empty() {
        return Err(Error::InvalidConfig(vec!["no country series to fit".to_string()]));
    }
    let results = fit_countries(panel, factors, countries, windows, cov)?;
    write_rows(&out.join("table3.csv"), &coefficient_table(&results, |r| &r.static_fit, &[]))?;
    write_rows(
        &out.join("table4.csv"),
        &coefficient_table(&results, |r| &r.crisis.fit, &["f_statistic", "p_value"]),
    )?;
    write_json(
        &out.join("contagion.json"),
        &ContagionReport {
            orth_intercept: factors.orth_intercept,
            orth_slope: factors.orth_slope,
            standardized_shocks: false,
            covariance: cov,
            windows,
            countries: &results,
        },
    )?;
    std::fs::write(out.join("contagion.txt"), contagion_text(&results))?;

    let mut header = vec!["date".to_string()];
    let mut cols = Vec::new();
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            header.push(format!("{}|{}", results[i].country, results[j].country));
            cols.push(rolling_residual_correlation(
                &results[i].static_fit.residuals,
                &results[j].static_fit.residuals,
                rolling_window,
            )?);
        }
    }
    let mut rows = vec![header];
    for (t, d) in panel.dates.iter().enumerate() {
        let mut row = vec![d.to_string()];
        row.extend(cols.iter().map(|c| c[t].map(|v| v.to_string()).unwrap_or_default()));
        rows.push(row);
    }
    write_rows(&out.join("rolling_corr.csv"), &rows)?;
    Ok(results)
}

/// Run the pipeline from `from_stage` (1 or 2) and write the manifest.
pub fn run_pipeline(cfg: &PipelineConfig, from_stage: u8) -> Result<Manifest> {
    let issues = validate_config(cfg);
    if !issues.is_empty() {
        return Err(Error::InvalidConfig(issues));
    }
    if !(1..=2).contains(&from_stage) {
        return Err(Error::InvalidConfig(vec![format!("from_stage must be 1 or 2, got {from_stage}")]));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    if from_stage == 1 {
        stage("load-and-fit-factors", run_stage1(cfg))?;
    } else {
        for f in STAGE1_FILES {
            if !cfg.out_dir.join(f).is_file() {
                return Err(Error::InvalidConfig(vec![format!(
                    "stage 2 needs stage-1 output {} in {}",
                    f,
                    cfg.out_dir.display()
                )]));
            }
        }
    }
    stage("contagion", run_stage2(cfg))?;

    let mut inputs = Vec::new();
    for p in [&cfg.data.returns, &cfg.data.french].into_iter().flatten() {
        inputs.push(FileHash {
            path: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: sha256_file(p)?,
        });
    }
    let mut outputs = Vec::new();
    for f in STAGE1_FILES.iter().chain(STAGE2_FILES.iter()) {
        outputs.push(FileHash {
            path: f.to_string(),
            sha256: sha256_file(&cfg.out_dir.join(f))?,
        });
    }
    let mut notes = BTreeMap::new();
    notes.insert("crate".into(), format!("volcontagion {}", env!("CARGO_PKG_VERSION")));
    notes.insert("us".into(), format!("{} {} {}", cfg.us_column, cfg.us_vol, cfg.us_mean));
    notes.insert("eu".into(), format!("{} {} {}", cfg.eu_column, cfg.eu_vol, cfg.eu_mean));
    notes.insert("nu".into(), cfg.nu.to_string());
    notes.insert("particles".into(), cfg.particles.to_string());
    notes.insert("vol_shock_law".into(), "half-t scale times Gaussian".into());
    notes.insert("shocks_standardized".into(), "no".into());
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        inputs,
        outputs,
        notes,
    };
    write_json(&cfg.out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
