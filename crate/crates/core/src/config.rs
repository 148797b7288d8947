//! A small key-value configuration format with section headers:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! list = 1, 2, 3
//! ```
//!
//! Keys before the first header belong to the unnamed section `""`.

use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;

use crate::contagion::{CrisisWindow, CrisisWindows};
use crate::error::{Error, Result};
use crate::esv::{EsvParams, GridSpec};
use crate::ingest::parse_date;
use crate::simulate::{Cholesky2, GammaRegime, JointSimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvDoc {
    pub sections: Vec<Section>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: "value".to_string(),
        message: message.into(),
    }
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc {
            sections: vec![Section {
                name: String::new(),
                entries: Vec::new(),
            }],
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line, "unterminated section header"))?
                    .trim();
                if doc.sections.iter().any(|s| s.name == name) {
                    return Err(parse_err(line, format!("duplicate section [{name}]")));
                }
                doc.sections.push(Section {
                    name: name.to_string(),
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected 'key = value', got '{content}'")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_err(line, "empty key"));
            }
            let section = doc.sections.last_mut().expect("root section");
            if section.entries.iter().any(|e| e.key == key) {
                return Err(parse_err(line, format!("duplicate key '{key}'")));
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Sections whose names start with `prefix`, with the prefix removed.
    pub fn sections_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Section)> + 'a {
        self.sections
            .iter()
            .filter_map(move |s| s.name.strip_prefix(prefix).map(|rest| (rest, s)))
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.section(section)?.get(key)
    }
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e.parse().map(Some),
        }
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?.ok_or_else(|| Error::InvalidConfig(vec![format!("[{}] is missing '{key}'", self.name)]))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e.list().map(Some),
        }
    }
}

impl Entry {
    pub fn parse<T: FromStr>(&self) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| parse_err(self.line, format!("cannot parse value '{}' of '{}'", self.value, self.key)))
    }

    pub fn list<T: FromStr>(&self) -> Result<Vec<T>> {
        self.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| parse_err(self.line, format!("cannot parse list item '{s}' of '{}'", self.key)))
            })
            .collect()
    }

    pub fn date(&self) -> Result<NaiveDate> {
        parse_date(&self.value).ok_or_else(|| parse_err(self.line, format!("bad date '{}'", self.value)))
    }

    /// A `start, end` date pair.
    pub fn date_range(&self) -> Result<(NaiveDate, NaiveDate)> {
        let parts: Vec<&str> = self.value.split(',').map(str::trim).collect();
        let [a, b] = parts.as_slice() else {
            return Err(parse_err(self.line, format!("'{}' needs 'start, end'", self.key)));
        };
        let p = |s: &str| parse_date(s).ok_or_else(|| parse_err(self.line, format!("bad date '{s}'")));
        Ok((p(a)?, p(b)?))
    }
}

/// `[windows]` section: `label = start, end` per window.
pub fn windows_from_doc(doc: &KvDoc) -> Result<Option<CrisisWindows>> {
    let Some(section) = doc.section("windows") else {
        return Ok(None);
    };
    let windows = section
        .entries
        .iter()
        .map(|e| {
            let (start, end) = e.date_range()?;
            Ok(CrisisWindow {
                label: e.key.clone(),
                start,
                end,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(CrisisWindows { windows }))
}

/// `[grid]` section with `sigma0`, `phi` and `tau2` lists; missing lists
/// take the default values.
pub fn grid_from_doc(doc: &KvDoc) -> Result<Option<GridSpec>> {
    let Some(s) = doc.section("grid") else {
        return Ok(None);
    };
    let d = GridSpec::default();
    Ok(Some(GridSpec {
        sigma0_values: s.list("sigma0")?.unwrap_or(d.sigma0_values),
        phi_values: s.list("phi")?.unwrap_or(d.phi_values),
        tau2_values: s.list("tau2")?.unwrap_or(d.tau2_values),
    }))
}

fn esv_from_section(s: &Section) -> Result<EsvParams> {
    Ok(EsvParams {
        sigma0: s.required("sigma0")?,
        phi: s.required("phi")?,
        tau2: s.required("tau2")?,
        nu: s.parsed::<f64>("nu")?.unwrap_or(2.0),
    })
}

/// Joint simulation settings:
///
/// ```text
/// [simulate]      t, seed, start (date), factor_mean = us, eu
/// [esv_us]        sigma0, phi, tau2, nu
/// [esv_eu]        sigma0, phi, tau2, nu
/// [chol]          l11, l21, l22
/// [country.NAME]  b = us, eu; gamma = g1, g2; alpha; idio_sd
/// [regime.LABEL]  start, end (day indices); gamma2 = one value per country
/// ```
pub fn joint_sim_from_doc(doc: &KvDoc) -> Result<JointSimConfig> {
    let missing = |name: &str| Error::InvalidConfig(vec![format!("missing section [{name}]")]);
    let sim = doc.section("simulate").ok_or_else(|| missing("simulate"))?;
    let esv_us = esv_from_section(doc.section("esv_us").ok_or_else(|| missing("esv_us"))?)?;
    let esv_eu = esv_from_section(doc.section("esv_eu").ok_or_else(|| missing("esv_eu"))?)?;
    let chol = match doc.section("chol") {
        Some(c) => Cholesky2 {
            l11: c.required("l11")?,
            l21: c.required("l21")?,
            l22: c.required("l22")?,
        },
        None => Cholesky2::IDENTITY,
    };
    let pair = |s: &Section, key: &str| -> Result<[f64; 2]> {
        let v: Vec<f64> = s
            .list(key)?
            .ok_or_else(|| Error::InvalidConfig(vec![format!("[{}] is missing '{key}'", s.name)]))?;
        v.try_into()
            .map_err(|_| Error::InvalidConfig(vec![format!("[{}] '{key}' needs two values", s.name)]))
    };
    let mut cfg = JointSimConfig {
        esv_us,
        esv_eu,
        chol,
        factor_mean: match sim.get("factor_mean") {
            Some(_) => pair(sim, "factor_mean")?,
            None => [0.0, 0.0],
        },
        countries: Vec::new(),
        b: Vec::new(),
        gamma: Vec::new(),
        alpha: Vec::new(),
        idio_sd: Vec::new(),
        regimes: Vec::new(),
        t: sim.required("t")?,
        seed: sim.parsed("seed")?.unwrap_or(0),
        start_date: match sim.get("start") {
            Some(e) => e.date()?,
            None => NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
        },
    };
    for (name, s) in doc.sections_with_prefix("country.") {
        cfg.countries.push(name.to_string());
        cfg.b.push(pair(s, "b")?);
        cfg.gamma.push(pair(s, "gamma")?);
        cfg.alpha.push(s.parsed("alpha")?.unwrap_or(0.0));
        cfg.idio_sd.push(s.required("idio_sd")?);
    }
    for (_, s) in doc.sections_with_prefix("regime.") {
        cfg.regimes.push(GammaRegime {
            start: s.required("start")?,
            end: s.required("end")?,
            gamma2: s.list("gamma2")?.unwrap_or_default(),
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let doc = KvDoc::parse("top = 1\n# note\n[a]\nx = 2 # trailing\nlist = 1, 2 ,3\n\n[b]\ny=hello\n").unwrap();
        assert_eq!(doc.get("", "top").unwrap().value, "1");
        assert_eq!(doc.section("a").unwrap().parsed::<i32>("x").unwrap(), Some(2));
        assert_eq!(doc.section("a").unwrap().list::<f64>("list").unwrap(), Some(vec![1.0, 2.0, 3.0]));
        assert_eq!(doc.get("b", "y").unwrap().line, 8);
    }

    #[test]
    fn rejects_malformed_lines() {
        for bad in ["[a\nx=1", "just text", "[a]\nx=1\nx=2", "[a]\n[a]", " = 3"] {
            assert!(matches!(KvDoc::parse(bad), Err(Error::Parse { .. })), "{bad}");
        }
        let doc = KvDoc::parse("[a]\nx = abc").unwrap();
        match doc.section("a").unwrap().parsed::<f64>("x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn windows_and_grid() {
        let doc = KvDoc::parse("[windows]\nmay = 2010-05-01, 2010-05-31\naug = 20110801, 20110831\n[grid]\nphi = 0.9, 0.99\n").unwrap();
        let w = windows_from_doc(&doc).unwrap().unwrap();
        assert_eq!(w.windows.len(), 2);
        assert_eq!(w.windows[1].start, NaiveDate::from_ymd_opt(2011, 8, 1).unwrap());
        let g = grid_from_doc(&doc).unwrap().unwrap();
        assert_eq!(g.phi_values, vec![0.9, 0.99]);
        assert_eq!(g.tau2_values, GridSpec::default().tau2_values);
    }

    #[test]
    fn joint_sim_config() {
        let text = "[simulate]\nt = 100\nseed = 7\nfactor_mean = 0.03, 0.02\n\
                    [esv_us]\nsigma0 = 0.05\nphi = 0.95\ntau2 = 0.01\n\
                    [esv_eu]\nsigma0 = 0.05\nphi = 0.95\ntau2 = 0.01\nnu = 3\n\
                    [chol]\nl11 = 1\nl21 = 0.7\nl22 = 1\n\
                    [country.DEU]\nb = 0.1, 0.9\ngamma = 0.4, -0.2\nidio_sd = 0.5\n\
                    [country.ITA]\nb = 0.1, 1.1\ngamma = 0.3, 0.2\nalpha = 0.01\nidio_sd = 0.6\n";
        let cfg = joint_sim_from_doc(&KvDoc::parse(text).unwrap()).unwrap();
        assert_eq!(cfg.countries, vec!["DEU", "ITA"]);
        assert_eq!(cfg.chol.l21, 0.7);
        assert_eq!(cfg.esv_eu.nu, 3.0);
        assert_eq!(cfg.esv_us.nu, 2.0);
        assert_eq!(cfg.gamma[0], [0.4, -0.2]);
        let broken = text.replace("idio_sd = 0.6", "");
        assert!(joint_sim_from_doc(&KvDoc::parse(&broken).unwrap()).is_err());
    }
}
