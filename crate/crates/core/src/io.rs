//! CSV ingestion and the small text formats accepted on the command line.
//!
//! Every reader here takes arbitrary bytes and must fail with an error, never
//! a panic; the `fuzz/` targets drive these entry points directly.

use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sample::{Cutoff, RdSample};

/// What a CSV column is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Score,
    Outcome,
    /// Treatment received, `D_i`.
    Treatment,
    /// Per-unit cutoff, `C_i`.
    Cutoff,
    Score2,
    Covariate,
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "score" | "x" | "running" => Role::Score,
            "outcome" | "y" => Role::Outcome,
            "treatment" | "d" | "received" | "treatment_received" => Role::Treatment,
            "cutoff" | "c" => Role::Cutoff,
            "score2" | "x2" => Role::Score2,
            "covariate" | "cov" | "z" => Role::Covariate,
            other => return Err(Error::Config(format!("unknown column role `{other}`"))),
        })
    }
}

/// Column name to role mapping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnMap {
    entries: Vec<(String, Role)>,
}

impl ColumnMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, column: impl Into<String>, role: Role) -> Self {
        self.insert(column, role);
        self
    }

    pub fn insert(&mut self, column: impl Into<String>, role: Role) {
        let column = column.into();
        // single-valued roles are replaced, covariates accumulate
        if role != Role::Covariate {
            self.entries.retain(|(_, r)| *r != role);
        }
        self.entries.retain(|(c, _)| *c != column);
        self.entries.push((column, role));
    }

    /// Parse one `column=role` entry and add it.
    pub fn insert_spec(&mut self, spec: &str) -> Result<()> {
        let (col, role) = parse_map_entry(spec)?;
        self.insert(col, role);
        Ok(())
    }

    pub fn column_for(&self, role: Role) -> Option<&str> {
        self.entries.iter().find(|(_, r)| *r == role).map(|(c, _)| c.as_str())
    }

    pub fn covariates(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(|(_, r)| *r == Role::Covariate).map(|(c, _)| c.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// Cutoff used when no column carries the `cutoff` role.
    pub cutoff: f64,
    /// Fill the outcome with zeros when the file has no outcome column.
    pub outcome_optional: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            cutoff: 0.0,
            outcome_optional: false,
        }
    }
}

pub fn is_na(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA" || c.eq_ignore_ascii_case("nan")
}

/// Parse a numeric cell with a dot decimal separator. `Ok(None)` for NA.
pub fn parse_cell(cell: &str) -> std::result::Result<Option<f64>, String> {
    if is_na(cell) {
        return Ok(None);
    }
    let c = cell.trim();
    match c.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Err(format!("non-finite value `{c}`")),
        Err(_) => Err(format!("non-numeric value `{c}`")),
    }
}

pub fn load_csv(path: impl AsRef<Path>, map: &ColumnMap, opts: &CsvOptions) -> Result<RdSample> {
    let file = File::open(path.as_ref())?;
    read_csv(file, map, opts)
}

/// Read a unit-level sample. Rows missing the score, outcome, cutoff,
/// treatment or second score are dropped and counted in
/// [`RdSample::dropped`]; missing covariates are kept as `NaN`.
pub fn read_csv<R: Read>(reader: R, map: &ColumnMap, opts: &CsvOptions) -> Result<RdSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::NoData);
    }
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Config(format!("column `{name}` not found in header")))
    };
    let required = |role: Role, default: &str| -> Result<usize> { find(map.column_for(role).unwrap_or(default)) };
    let score_col = required(Role::Score, "score")?;
    let outcome_col = match required(Role::Outcome, "outcome") {
        Err(_) if opts.outcome_optional && map.column_for(Role::Outcome).is_none() => None,
        r => Some(r?),
    };
    let optional = |role: Role| -> Result<Option<usize>> { map.column_for(role).map(find).transpose() };
    let d_col = optional(Role::Treatment)?;
    let c_col = optional(Role::Cutoff)?;
    let s2_col = optional(Role::Score2)?;
    let cov_cols: Vec<(String, usize)> = map
        .covariates()
        .map(|name| find(name).map(|i| (name.to_string(), i)))
        .collect::<Result<_>>()?;

    let mut score = Vec::new();
    let mut outcome = Vec::new();
    let mut d = Vec::new();
    let mut cut = Vec::new();
    let mut s2 = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_cols.len()];
    let mut dropped = 0usize;
    let mut rows = 0usize;

    for rec in rdr.records() {
        let rec = rec?;
        rows += 1;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| -> Result<Option<f64>> {
            parse_cell(rec.get(i).unwrap_or("")).map_err(|message| Error::Row {
                line,
                message: format!("column `{}`: {message}", &headers[i]),
            })
        };
        let x = get(score_col)?;
        let y = match outcome_col {
            Some(i) => get(i)?,
            None => Some(0.0),
        };
        let di = d_col.map(get).transpose()?;
        let ci = c_col.map(get).transpose()?;
        let s2i = s2_col.map(get).transpose()?;
        let missing = x.is_none() || y.is_none() || matches!(di, Some(None)) || matches!(ci, Some(None)) || matches!(s2i, Some(None));
        if missing {
            dropped += 1;
            continue;
        }
        score.push(x.unwrap());
        outcome.push(y.unwrap());
        if let Some(Some(v)) = di {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Row {
                    line,
                    message: format!("treatment received must be 0 or 1, found {v}"),
                });
            }
            d.push(v);
        }
        if let Some(Some(v)) = ci {
            cut.push(v);
        }
        if let Some(Some(v)) = s2i {
            s2.push(v);
        }
        for (k, (_, i)) in cov_cols.iter().enumerate() {
            covs[k].push(get(*i)?.unwrap_or(f64::NAN));
        }
    }
    if rows == 0 || score.is_empty() {
        return Err(Error::NoData);
    }
    let cutoff = match c_col {
        Some(_) => Cutoff::PerUnit(cut),
        None => Cutoff::Scalar(opts.cutoff),
    };
    let mut sample = RdSample::new(score, outcome, cutoff)?.with_dropped(dropped);
    if d_col.is_some() {
        sample = sample.with_received(d)?;
    }
    if s2_col.is_some() {
        sample = sample.with_score2(s2)?;
    }
    for ((name, _), values) in cov_cols.into_iter().zip(covs) {
        sample = sample.with_covariate(name, values)?;
    }
    Ok(sample)
}

/// Human-readable drop report, e.g. `1 row dropped`.
pub fn drop_report(sample: &RdSample) -> String {
    match sample.dropped() {
        1 => "1 row dropped".to_string(),
        n => format!("{n} rows dropped"),
    }
}

/// Read boundary points: columns `(lat, lon)` or `(x1, x2)`, falling back to
/// the first two columns.
pub fn read_boundary_csv<R: Read>(reader: R) -> Result<Vec<[f64; 2]>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let pos = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let (a, b) = match (pos("lat"), pos("lon"), pos("x1"), pos("x2")) {
        (Some(a), Some(b), _, _) | (_, _, Some(a), Some(b)) => (a, b),
        _ if headers.len() >= 2 => (0, 1),
        _ => return Err(Error::Config("boundary file needs two coordinate columns".into())),
    };
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| -> Result<f64> {
            match parse_cell(rec.get(i).unwrap_or("")) {
                Ok(Some(v)) => Ok(v),
                Ok(None) => Err(Error::Row {
                    line,
                    message: "missing boundary coordinate".into(),
                }),
                Err(message) => Err(Error::Row { line, message }),
            }
        };
        points.push([get(a)?, get(b)?]);
    }
    if points.is_empty() {
        return Err(Error::NoData);
    }
    Ok(points)
}

/// Read a list of cutoff values: column `cutoff`, or the first column.
pub fn read_cutoffs_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::NoData);
    }
    let col = headers.iter().position(|h| h.trim().eq_ignore_ascii_case("cutoff")).unwrap_or(0);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        match parse_cell(rec.get(col).unwrap_or("")) {
            Ok(Some(v)) => out.push(v),
            Ok(None) => {}
            Err(message) => return Err(Error::Row { line, message }),
        }
    }
    if out.is_empty() {
        return Err(Error::NoData);
    }
    Ok(out)
}

/// `column=role`.
pub fn parse_map_entry(spec: &str) -> Result<(String, Role)> {
    let (col, role) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected column=role, got `{spec}`")))?;
    let col = col.trim();
    if col.is_empty() {
        return Err(Error::Config(format!("empty column name in `{spec}`")));
    }
    Ok((col.to_string(), role.parse()?))
}

/// Grid `lo:hi:step`, inclusive of `hi` up to rounding.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("expected lo:hi:step, got `{spec}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
    let (lo, hi, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
    if !(step > 0.0) || hi < lo {
        return Err(Error::Config(format!("grid `{spec}` needs lo <= hi and a positive step")));
    }
    let n = ((hi - lo) / step + 1e-9).floor();
    if n > 1e7 {
        return Err(Error::Config(format!("grid `{spec}` has too many points")));
    }
    Ok((0..=n as usize).map(|i| lo + i as f64 * step).collect())
}

/// Two comma-separated numbers, e.g. `lat,lon`.
pub fn parse_point(spec: &str) -> Result<[f64; 2]> {
    let bad = || Error::Config(format!("expected two comma-separated numbers, got `{spec}`"));
    let (a, b) = spec.split_once(',').ok_or_else(bad)?;
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
    Ok([num(a)?, num(b)?])
}

/// Comma-separated list of numbers.
pub fn parse_list(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("non-numeric list entry `{s}`")))
        })
        .collect()
}
