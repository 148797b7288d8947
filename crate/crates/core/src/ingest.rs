//! Loading, validating and aligning daily return series.
//!
//! All returns are stored in percent per day. Missing values are never
//! imputed: a row that fails to parse is an error, and panels are built from
//! the intersection of trading days only.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesKind {
    Return,
    Price,
    RiskFreeRate,
}

impl SeriesKind {
    fn name(self) -> &'static str {
        match self {
            SeriesKind::Return => "return",
            SeriesKind::Price => "price",
            SeriesKind::RiskFreeRate => "risk_free_rate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvFormat {
    /// `date,ticker,value` rows.
    Long,
    /// `date,<ticker>,<ticker>,...` rows.
    Wide,
}

impl std::str::FromStr for CsvFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "long" | "long_csv" => Ok(CsvFormat::Long),
            "wide" | "wide_csv" => Ok(CsvFormat::Wide),
            other => Err(Error::InvalidParams(format!("unknown csv format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub ticker: String,
    pub kind: SeriesKind,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl RawSeries {
    /// Build a series, checking the date and value invariants.
    pub fn new(
        ticker: impl Into<String>,
        kind: SeriesKind,
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let ticker = ticker.into();
        if dates.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: dates.len(),
                found: values.len(),
            });
        }
        for (i, w) in dates.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::Parse {
                    line: i + 2,
                    column: ticker.clone(),
                    message: format!("date {} is not after {}", w[1], w[0]),
                });
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: i + 1,
                column: ticker.clone(),
                message: format!("non-finite value on {}", dates[i]),
            });
        }
        Ok(Self {
            ticker,
            kind,
            dates,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How column names map onto series kinds when loading a file.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Column holding the risk-free rate (percent per day).
    pub rf_column: Option<String>,
    /// Columns holding price levels rather than returns.
    pub price_columns: Vec<String>,
    /// Restrict loading to these columns; `None` loads every column.
    pub columns: Option<Vec<String>>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            rf_column: Some("RF".to_string()),
            price_columns: Vec::new(),
            columns: None,
        }
    }
}

impl LoadOptions {
    fn kind_of(&self, name: &str) -> SeriesKind {
        if self.rf_column.as_deref() == Some(name) {
            SeriesKind::RiskFreeRate
        } else if self.price_columns.iter().any(|c| c == name) {
            SeriesKind::Price
        } else {
            SeriesKind::Return
        }
    }

    fn wants(&self, name: &str) -> bool {
        self.columns
            .as_ref()
            .is_none_or(|cols| cols.iter().any(|c| c == name))
    }
}

/// Accepts ISO-8601 (`2010-05-10`) and compact (`20100510`) dates.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| {
            if s.len() == 8 && s.bytes().all(|b| b.is_ascii_digit()) {
                NaiveDate::parse_from_str(s, "%Y%m%d").ok()
            } else {
                None
            }
        })
}

fn parse_value(raw: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        column: column.to_string(),
        message: format!("cannot parse '{}' as a number", raw.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            column: column.to_string(),
            message: format!("non-finite value '{}'", raw.trim()),
        });
    }
    Ok(v)
}

fn parse_date_field(raw: &str, line: usize) -> Result<NaiveDate> {
    parse_date(raw).ok_or_else(|| Error::Parse {
        line,
        column: "date".to_string(),
        message: format!("cannot parse '{}' as a date", raw.trim()),
    })
}

fn is_date_header(h: &str) -> bool {
    let h = h.trim();
    h.is_empty() || h.eq_ignore_ascii_case("date")
}

/// Load every series in a delimited file.
pub fn load_series(path: &Path, format: CsvFormat, opts: &LoadOptions) -> Result<Vec<RawSeries>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_series(&text, format, opts)
}

/// Parse series from CSV text; see [`load_series`].
pub fn parse_series(text: &str, format: CsvFormat, opts: &LoadOptions) -> Result<Vec<RawSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || !is_date_header(&headers[0]) {
        return Err(Error::Parse {
            line: 1,
            column: headers.first().cloned().unwrap_or_default(),
            message: "first column must be named 'date'".to_string(),
        });
    }
    let records = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect::<Vec<_>>()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyFile);
    }
    match format {
        CsvFormat::Wide => parse_wide(&headers, &records, 2, opts),
        CsvFormat::Long => parse_long(&headers, &records, opts),
    }
}

fn duplicate_date(line: usize, column: &str, date: NaiveDate) -> Error {
    Error::Parse {
        line,
        column: column.to_string(),
        message: format!("duplicate date {date}"),
    }
}

/// `first_line` is the 1-based file line of `records[0]`.
fn parse_wide(
    headers: &[String],
    records: &[Vec<String>],
    first_line: usize,
    opts: &LoadOptions,
) -> Result<Vec<RawSeries>> {
    let selected: Vec<usize> = (1..headers.len()).filter(|&j| opts.wants(&headers[j])).collect();
    let mut rows: Vec<(NaiveDate, usize, Vec<f64>)> = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let line = first_line + i;
        let date = parse_date_field(&rec[0], line)?;
        let mut vals = Vec::with_capacity(selected.len());
        for &j in &selected {
            vals.push(parse_value(&rec[j], line, &headers[j])?);
        }
        rows.push((date, line, vals));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(duplicate_date(w[1].1, "date", w[1].0));
    }
    let dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
    selected
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let name = &headers[j];
            RawSeries::new(
                name.clone(),
                opts.kind_of(name),
                dates.clone(),
                rows.iter().map(|r| r.2[k]).collect(),
            )
        })
        .collect()
}

fn parse_long(headers: &[String], records: &[Vec<String>], opts: &LoadOptions) -> Result<Vec<RawSeries>> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                line: 1,
                column: name.to_string(),
                message: format!("missing '{name}' column"),
            })
    };
    let (ti, vi) = (find("ticker")?, find("value")?);
    let mut order: Vec<String> = Vec::new();
    let mut by_ticker: HashMap<String, BTreeMap<NaiveDate, f64>> = HashMap::new();
    for (i, rec) in records.iter().enumerate() {
        let line = i + 2;
        let ticker = rec[ti].clone();
        if !opts.wants(&ticker) {
            continue;
        }
        let date = parse_date_field(&rec[0], line)?;
        let value = parse_value(&rec[vi], line, &ticker)?;
        let obs = by_ticker.entry(ticker.clone()).or_insert_with(|| {
            order.push(ticker.clone());
            BTreeMap::new()
        });
        if obs.insert(date, value).is_some() {
            return Err(duplicate_date(line, &ticker, date));
        }
    }
    order
        .into_iter()
        .map(|t| {
            let obs = by_ticker.remove(&t).expect("ticker recorded on insert");
            let kind = opts.kind_of(&t);
            let (dates, values) = obs.into_iter().unzip();
            RawSeries::new(t, kind, dates, values)
        })
        .collect()
}

/// Load Kenneth French's daily factor file as distributed (text preamble,
/// blank first header cell, `YYYYMMDD` dates, trailing notes).
pub fn load_french_daily(path: &Path) -> Result<Vec<RawSeries>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_french_daily(&text)
}

pub fn parse_french_daily(text: &str) -> Result<Vec<RawSeries>> {
    let lines: Vec<&str> = text.lines().collect();
    let header_idx = lines
        .iter()
        .position(|l| {
            let first = l.split(',').next().unwrap_or("").trim();
            l.contains(',') && is_date_header(first) && l.contains("RF")
        })
        .ok_or(Error::EmptyFile)?;
    let headers: Vec<String> = lines[header_idx].split(',').map(|h| h.trim().to_string()).collect();
    let mut records = Vec::new();
    for l in &lines[header_idx + 1..] {
        let fields: Vec<String> = l.split(',').map(|f| f.trim().to_string()).collect();
        let first = &fields[0];
        if first.len() != 8 || !first.bytes().all(|b| b.is_ascii_digit()) {
            break;
        }
        if fields.len() != headers.len() {
            return Err(Error::Parse {
                line: header_idx + 2 + records.len(),
                column: "date".to_string(),
                message: format!("expected {} fields, found {}", headers.len(), fields.len()),
            });
        }
        records.push(fields);
    }
    if records.is_empty() {
        return Err(Error::EmptyFile);
    }
    parse_wide(&headers, &records, header_idx + 2, &LoadOptions::default())
}

/// Percent excess returns from a price series and a risk-free series.
///
/// Each return uses consecutive observations of the price series,
/// `100 (p_t / p_{t-1} - 1) - rf_t`, and is kept only on days where the
/// risk-free rate is also observed.
pub fn prices_to_excess_returns(prices: &RawSeries, rf: &RawSeries) -> Result<RawSeries> {
    if prices.kind != SeriesKind::Price {
        return Err(Error::WrongKind {
            ticker: prices.ticker.clone(),
            expected: SeriesKind::Price.name(),
        });
    }
    if rf.kind != SeriesKind::RiskFreeRate {
        return Err(Error::WrongKind {
            ticker: rf.ticker.clone(),
            expected: SeriesKind::RiskFreeRate.name(),
        });
    }
    if let Some(i) = prices.values.iter().position(|&p| p <= 0.0) {
        return Err(Error::NonPositivePrice {
            date: prices.dates[i],
            value: prices.values[i],
        });
    }
    let rf_by_date: HashMap<NaiveDate, f64> = rf.dates.iter().copied().zip(rf.values.iter().copied()).collect();
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for t in 1..prices.len() {
        if let Some(r) = rf_by_date.get(&prices.dates[t]) {
            dates.push(prices.dates[t]);
            values.push(100.0 * (prices.values[t] / prices.values[t - 1] - 1.0) - r);
        }
    }
    if dates.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    RawSeries::new(prices.ticker.clone(), SeriesKind::Return, dates, values)
}

/// Subtract a risk-free series from a raw return series on common dates.
pub fn returns_to_excess(returns: &RawSeries, rf: &RawSeries) -> Result<RawSeries> {
    let rf_by_date: HashMap<NaiveDate, f64> = rf.dates.iter().copied().zip(rf.values.iter().copied()).collect();
    let (dates, values): (Vec<_>, Vec<_>) = returns
        .dates
        .iter()
        .zip(&returns.values)
        .filter_map(|(d, v)| rf_by_date.get(d).map(|r| (*d, v - r)))
        .unzip();
    if dates.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    RawSeries::new(returns.ticker.clone(), SeriesKind::Return, dates, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignPolicy {
    #[default]
    Intersect,
}

/// Date-aligned matrix of daily excess returns, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<String>,
    /// One vector per column, each of length `dates.len()`.
    pub values: Vec<Vec<f64>>,
}

impl ReturnPanel {
    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|j| self.values[j].as_slice())
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|c| c[i]).collect()
    }

    /// The panel's columns as return series, for re-alignment.
    pub fn to_series(&self) -> Vec<RawSeries> {
        self.columns
            .iter()
            .zip(&self.values)
            .map(|(c, v)| RawSeries {
                ticker: c.clone(),
                kind: SeriesKind::Return,
                dates: self.dates.clone(),
                values: v.clone(),
            })
            .collect()
    }

    /// Keep only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<ReturnPanel> {
        let mut values = Vec::with_capacity(names.len());
        for n in names {
            let col = self
                .column(n)
                .ok_or_else(|| Error::InvalidParams(format!("panel has no column '{n}'")))?;
            values.push(col.to_vec());
        }
        Ok(ReturnPanel {
            dates: self.dates.clone(),
            columns: names.to_vec(),
            values,
        })
    }

    /// Write as a wide CSV. Values use the shortest representation that
    /// parses back to the identical `f64`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        write!(w, "date")?;
        for c in &self.columns {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for (i, d) in self.dates.iter().enumerate() {
            write!(w, "{d}")?;
            for col in &self.values {
                write!(w, ",{}", col[i])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    /// Load a wide CSV of returns into a panel.
    pub fn load(path: &Path) -> Result<ReturnPanel> {
        let opts = LoadOptions {
            rf_column: None,
            ..LoadOptions::default()
        };
        align(&load_series(path, CsvFormat::Wide, &opts)?, AlignPolicy::Intersect)
    }

    pub fn parse(text: &str) -> Result<ReturnPanel> {
        let opts = LoadOptions {
            rf_column: None,
            ..LoadOptions::default()
        };
        align(&parse_series(text, CsvFormat::Wide, &opts)?, AlignPolicy::Intersect)
    }
}

/// Align return series on their common trading days.
pub fn align(series: &[RawSeries], policy: AlignPolicy) -> Result<ReturnPanel> {
    let AlignPolicy::Intersect = policy;
    let first = series.first().ok_or(Error::EmptyIntersection)?;
    for s in series {
        if s.kind != SeriesKind::Return {
            return Err(Error::WrongKind {
                ticker: s.ticker.clone(),
                expected: SeriesKind::Return.name(),
            });
        }
    }
    // Walk all series with one cursor each; dates are strictly increasing.
    let mut cursors = vec![0usize; series.len()];
    let mut dates = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); series.len()];
    'outer: for &d in &first.dates {
        let mut hits = Vec::with_capacity(series.len());
        for (k, s) in series.iter().enumerate() {
            let c = &mut cursors[k];
            while *c < s.dates.len() && s.dates[*c] < d {
                *c += 1;
            }
            if *c >= s.dates.len() || s.dates[*c] != d {
                continue 'outer;
            }
            hits.push(s.values[*c]);
        }
        dates.push(d);
        for (k, v) in hits.into_iter().enumerate() {
            values[k].push(v);
        }
    }
    if dates.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    if dates.len() < 2 {
        return Err(Error::SampleTooSmall {
            needed: 2,
            found: dates.len(),
        });
    }
    Ok(ReturnPanel {
        dates,
        columns: series.iter().map(|s| s.ticker.clone()).collect(),
        values,
    })
}
