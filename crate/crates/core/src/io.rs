//! File formats: price CSV in and out, signal/report/path CSV out, JSON
//! records, run manifests, atomic writes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ews::EwsSeries;
use crate::series::PriceSeries;
use crate::sim::SimPath;
use crate::study::TrendReport;

const DATE_FMT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calendar {
    /// Each ticker keeps its own dates.
    #[default]
    AsIs,
    /// Restrict every ticker to the dates all tickers share.
    IntersectDates,
}

#[derive(Debug, Deserialize)]
struct PriceCsvRow {
    date: String,
    ticker: String,
    close: f64,
}

/// Parse a `date,ticker,close` CSV into one series per ticker (sorted by
/// ticker), each sorted by date and indexed 0, 1, 2, ...
pub fn parse_price_csv<R: Read>(reader: R, calendar: Calendar) -> Result<Vec<PriceSeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let expected = ["date", "ticker", "close"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse { line: 1, msg: format!("expected header date,ticker,close, got {:?}", headers) });
    }
    let mut by_ticker: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    let mut seen: HashSet<(String, NaiveDate)> = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: PriceCsvRow =
            rec.deserialize(Some(&headers)).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let date = NaiveDate::parse_from_str(&row.date, DATE_FMT)
            .map_err(|e| Error::Parse { line, msg: format!("bad date '{}': {e}", row.date) })?;
        if !(row.close > 0.0 && row.close.is_finite()) {
            return Err(Error::Validation { line, msg: format!("close must be positive, got {}", row.close) });
        }
        if !seen.insert((row.ticker.clone(), date)) {
            return Err(Error::Validation { line, msg: format!("duplicate row for {} on {}", row.ticker, row.date) });
        }
        by_ticker.entry(row.ticker).or_default().push((date, row.close));
    }

    if calendar == Calendar::IntersectDates && !by_ticker.is_empty() {
        let mut common: Option<BTreeSet<NaiveDate>> = None;
        for rows in by_ticker.values() {
            let dates: BTreeSet<NaiveDate> = rows.iter().map(|r| r.0).collect();
            common = Some(match common {
                None => dates,
                Some(c) => c.intersection(&dates).copied().collect(),
            });
        }
        let common = common.unwrap_or_default();
        if common.is_empty() {
            log::warn!("tickers share no common dates; no series loaded");
            return Ok(Vec::new());
        }
        for rows in by_ticker.values_mut() {
            rows.retain(|r| common.contains(&r.0));
        }
    }

    by_ticker
        .into_iter()
        .map(|(ticker, mut rows)| {
            rows.sort_by_key(|r| r.0);
            let times = (0..rows.len()).map(|i| i as f64).collect();
            let log_prices = rows.iter().map(|r| r.1.ln()).collect();
            let dates = Some(rows.iter().map(|r| r.0.format(DATE_FMT).to_string()).collect());
            let s = PriceSeries { id: ticker, times, log_prices, dates };
            s.validate()?;
            Ok(s)
        })
        .collect()
}

pub fn load_price_csv(path: &Path, calendar: Calendar) -> Result<Vec<PriceSeries>> {
    parse_price_csv(fs::File::open(path)?, calendar)
}

/// Business days (Mon-Fri) starting 2000-01-03, used to label series that
/// carry no calendar.
pub fn business_dates(n: usize) -> Vec<String> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d.format(DATE_FMT).to_string());
        }
        d += Duration::days(1);
    }
    out
}

/// Write series as `date,ticker,close` with closes at 17 significant digits.
pub fn write_price_csv<W: Write>(mut w: W, series: &[PriceSeries]) -> Result<()> {
    writeln!(w, "date,ticker,close")?;
    for s in series {
        let dates = s.dates.clone().unwrap_or_else(|| business_dates(s.len()));
        for (d, x) in dates.iter().zip(&s.log_prices) {
            writeln!(w, "{d},{},{:.16e}", s.id, x.exp())?;
        }
    }
    Ok(())
}

/// Long format: `asset_id,signal,window_end_time,value,missing_flag`.
pub fn write_ews_csv<W: Write>(mut w: W, series: &[EwsSeries]) -> Result<()> {
    writeln!(w, "asset_id,signal,window_end_time,value,missing_flag")?;
    for s in series {
        for (t, v) in s.times.iter().zip(&s.values) {
            match v {
                Some(v) => writeln!(w, "{},{},{t},{v},0", s.asset_id, s.signal)?,
                None => writeln!(w, "{},{},{t},,1", s.asset_id, s.signal)?,
            }
        }
    }
    Ok(())
}

/// `asset,step,time,value` rows for one or more simulated paths.
pub fn write_paths_csv<W: Write>(mut w: W, paths: &[SimPath]) -> Result<()> {
    writeln!(w, "asset,step,time,value")?;
    for (a, p) in paths.iter().enumerate() {
        for (k, v) in p.values.iter().enumerate() {
            writeln!(w, "{a},{k},{},{v}", k as f64 * p.dt)?;
        }
    }
    Ok(())
}

/// Flat summary: `signal,group,mean_tau,n,p_value`. Empty fields mark
/// missing values.
pub fn write_report_csv<W: Write>(mut w: W, report: &TrendReport) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    writeln!(w, "signal,group,mean_tau,n,p_value")?;
    for s in &report.signals {
        writeln!(w, "{},pre,{},{},{}", s.signal, opt(s.mean_tau_pre), s.n_pre, opt(s.p_value))?;
        writeln!(w, "{},normal,{},{},{}", s.signal, opt(s.mean_tau_normal), s.n_normal, opt(s.p_value))?;
    }
    Ok(())
}

/// Per-segment trends for plotting.
pub fn write_segments_csv<W: Write>(mut w: W, report: &TrendReport) -> Result<()> {
    writeln!(w, "asset_id,signal,group,start,end,tau,p_value")?;
    for s in &report.segments {
        writeln!(w, "{},{},{},{},{},{},{}", s.asset_id, s.signal, s.group, s.start, s.end, s.tau, s.p_value)?;
    }
    Ok(())
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments needed to reproduce the run, without `--out`.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// SHA-256 of the input files, in argument order.
    pub input_digest: String,
}

/// Write `bytes` to `path` through a temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}
