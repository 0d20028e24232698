//! Delimited artifact files.
//!
//! Every file is CSV with a single header row. Lines starting with `#` carry
//! `key=value` metadata (seed, scale, frequency, ...) and are ignored by the
//! record parser. Floats are written in shortest round-trip form, so reading
//! a file back reproduces the values bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{de::DeserializeOwned, Serialize};

use crate::decompose::{ComponentPanel, MaskedComponents};
use crate::error::{Error, Result};
use crate::factors::{ControlFactors, FactorMatrix, ModelSpec};
use crate::ingest::{BarRecord, Frequency, IntradayGrid, ReturnPanel};
use crate::moments::{Measure, MomentPanel, MomentSeries};
use crate::crosssection::RiskPremiaEstimate;
use crate::qbll::{DynamicEstimate, LambdaPath};
use crate::sorts::SortReport;

pub const DATE_FMT: &str = "%Y-%m-%d";
pub const TIMESTAMP_FMT: &str = "%Y-%m-%d %H:%M:%S";

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Parsed file: metadata, header, and raw records.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: std::path::PathBuf,
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut meta = BTreeMap::new();
        for line in text.lines().filter(|l| l.starts_with('#')) {
            for tok in line[1..].split_whitespace() {
                if let Some((k, v)) = tok.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table {
            path: path.to_path_buf(),
            meta,
            header,
            rows,
        })
    }

    pub fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header.len() < expected.len() || self.header[..expected.len()] != *expected {
            return Err(Error::parse(
                &self.path,
                format!("expected columns `{}`, found `{}`", expected.join(","), self.header.join(",")),
            ));
        }
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::parse(&self.path, format!("missing `# {key}=` header")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse()
            .map_err(|_| Error::parse(&self.path, format!("bad `{key}` value `{v}`")))
    }

    fn err(&self, row: usize, reason: impl std::fmt::Display) -> Error {
        Error::parse(&self.path, format!("record {}: {reason}", row + 1))
    }

    pub fn f64_at(&self, row: usize, col: usize) -> Result<f64> {
        let s = &self.rows[row][col];
        s.parse().map_err(|_| self.err(row, format!("`{s}` is not a number")))
    }

    pub fn opt_f64_at(&self, row: usize, col: usize) -> Result<Option<f64>> {
        if self.rows[row][col].is_empty() {
            Ok(None)
        } else {
            self.f64_at(row, col).map(Some)
        }
    }

    pub fn date_at(&self, row: usize, col: usize) -> Result<NaiveDate> {
        let s = &self.rows[row][col];
        NaiveDate::parse_from_str(s, DATE_FMT).map_err(|e| self.err(row, format!("date `{s}`: {e}")))
    }
}

/// Accumulates a file body; written in one go.
#[derive(Debug)]
pub struct TableWriter {
    meta: Vec<(String, String)>,
    out: csv::Writer<Vec<u8>>,
}

impl TableWriter {
    pub fn new(header: &[&str]) -> TableWriter {
        let mut out = csv::WriterBuilder::new().from_writer(Vec::new());
        out.write_record(header).expect("in-memory write");
        TableWriter { meta: Vec::new(), out }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.out.write_record(fields).expect("in-memory write");
    }

    pub fn into_string(self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            s.push_str(&format!("# {k}={v}\n"));
        }
        let body = self.out.into_inner().expect("in-memory flush");
        s.push_str(&String::from_utf8(body).expect("utf-8 fields"));
        s
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_text(path, &self.into_string())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn read_bars(path: &Path) -> Result<Vec<BarRecord>> {
    let t = Table::read(path)?;
    t.expect_header(&["timestamp", "symbol", "price"])?;
    (0..t.rows.len())
        .map(|i| {
            let ts = &t.rows[i][0];
            Ok(BarRecord {
                timestamp: parse_timestamp(ts).ok_or_else(|| t.err(i, format!("timestamp `{ts}`")))?,
                symbol: t.rows[i][1].clone(),
                price: t.f64_at(i, 2)?,
            })
        })
        .collect()
}

pub fn write_bars(path: &Path, bars: &[BarRecord]) -> Result<()> {
    let mut w = TableWriter::new(&["timestamp", "symbol", "price"]);
    for b in bars {
        w.row([b.timestamp.format(TIMESTAMP_FMT).to_string(), b.symbol.clone(), fmt_f64(b.price)]);
    }
    w.write(path)
}

pub fn read_risk_free(path: &Path) -> Result<BTreeMap<NaiveDate, f64>> {
    let t = Table::read(path)?;
    t.expect_header(&["date", "annualized_rate"])?;
    (0..t.rows.len()).map(|i| Ok((t.date_at(i, 0)?, t.f64_at(i, 1)?))).collect()
}

pub fn write_risk_free(path: &Path, rates: &BTreeMap<NaiveDate, f64>) -> Result<()> {
    let mut w = TableWriter::new(&["date", "annualized_rate"]);
    for (d, r) in rates {
        w.row([d.format(DATE_FMT).to_string(), fmt_f64(*r)]);
    }
    w.write(path)
}

pub fn read_adjustments(path: &Path) -> Result<BTreeMap<(String, NaiveDate), f64>> {
    let t = Table::read(path)?;
    t.expect_header(&["date", "symbol", "factor"])?;
    (0..t.rows.len())
        .map(|i| Ok(((t.rows[i][1].clone(), t.date_at(i, 0)?), t.f64_at(i, 2)?)))
        .collect()
}

pub fn read_controls(path: &Path) -> Result<ControlFactors> {
    let t = Table::read(path)?;
    t.expect_header(&["date", "mkt", "smb", "hml"])?;
    let values = (0..t.rows.len())
        .map(|i| Ok((t.date_at(i, 0)?, [t.f64_at(i, 1)?, t.f64_at(i, 2)?, t.f64_at(i, 3)?])))
        .collect::<Result<_>>()?;
    Ok(ControlFactors { values })
}

pub fn write_controls(path: &Path, c: &ControlFactors) -> Result<()> {
    let mut w = TableWriter::new(&["date", "mkt", "smb", "hml"]);
    for (d, v) in &c.values {
        w.row([d.format(DATE_FMT).to_string(), fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(v[2])]);
    }
    w.write(path)
}

fn parse_frequency(t: &Table) -> Result<Frequency> {
    match t.meta("frequency")? {
        "daily" => Ok(Frequency::Daily),
        "weekly" => Ok(Frequency::Weekly),
        other => Err(Error::parse(&t.path, format!("unknown frequency `{other}`"))),
    }
}

/// Long format, one row per observed cell.
pub fn write_return_panel(path: &Path, p: &ReturnPanel) -> Result<()> {
    let mut w = TableWriter::new(&["date", "asset", "excess_return"]).meta("frequency", p.frequency.as_str());
    for (t, d) in p.dates.iter().enumerate() {
        let ds = d.format(DATE_FMT).to_string();
        for (a, name) in p.assets.iter().enumerate() {
            w.row([ds.as_str(), name.as_str(), &fmt_opt(p.values[t][a])]);
        }
    }
    w.write(path)
}

pub fn read_return_panel(path: &Path) -> Result<ReturnPanel> {
    let t = Table::read(path)?;
    t.expect_header(&["date", "asset", "excess_return"])?;
    let freq = parse_frequency(&t)?;
    let rows = (0..t.rows.len())
        .map(|i| Ok((t.date_at(i, 0)?, t.rows[i][1].clone(), t.opt_f64_at(i, 2)?)))
        .collect::<Result<Vec<_>>>()?;
    let panel = ReturnPanel::from_long(freq, rows);
    panel.check_shape()?;
    Ok(panel)
}

pub fn write_intraday(path: &Path, grids: &[IntradayGrid]) -> Result<()> {
    let k = grids.first().map_or(0, |g| g.returns.len());
    let mut header = vec!["date".to_string(), "asset".to_string()];
    header.extend((1..=k).map(|j| format!("r{j}")));
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = TableWriter::new(&h).meta("k", k);
    for g in grids {
        let mut rec = vec![g.date.format(DATE_FMT).to_string(), g.symbol.clone()];
        rec.extend(g.returns.iter().map(|r| fmt_f64(*r)));
        w.row(rec);
    }
    w.write(path)
}

pub fn read_intraday(path: &Path) -> Result<Vec<IntradayGrid>> {
    let t = Table::read(path)?;
    t.expect_header(&["date", "asset"])?;
    let k = t.header.len() - 2;
    (0..t.rows.len())
        .map(|i| {
            let r = (0..k).map(|j| t.f64_at(i, j + 2)).collect::<Result<Vec<_>>>()?;
            Ok(IntradayGrid::from_returns(t.rows[i][1].clone(), t.date_at(i, 0)?, r))
        })
        .collect()
}

/// Column stems for a moment file of the given frequency.
pub fn moment_stems(freq: Frequency) -> [&'static str; 3] {
    match freq {
        Frequency::Daily => ["rdvol", "rds", "rdk"],
        Frequency::Weekly => ["rvol", "rs", "rk"],
    }
}

fn date_col(freq: Frequency) -> &'static str {
    match freq {
        Frequency::Daily => "date",
        Frequency::Weekly => "week",
    }
}

/// Asset rows followed by the market index rows under `index`.
pub fn write_moment_panel(path: &Path, p: &MomentPanel, index: &str) -> Result<()> {
    let [v, s, k] = moment_stems(p.frequency);
    let mut w = TableWriter::new(&[date_col(p.frequency), "asset", v, s, k])
        .meta("frequency", p.frequency.as_str())
        .meta("index", index);
    for (t, d) in p.dates.iter().enumerate() {
        let ds = d.format(DATE_FMT).to_string();
        for (a, name) in p.assets.iter().enumerate() {
            if p.vol[t][a].is_none() && p.skew[t][a].is_none() && p.kurt[t][a].is_none() {
                continue;
            }
            w.row([ds.clone(), name.clone(), fmt_opt(p.vol[t][a]), fmt_opt(p.skew[t][a]), fmt_opt(p.kurt[t][a])]);
        }
        let m = &p.market;
        w.row([ds, index.to_string(), fmt_opt(m.vol[t]), fmt_opt(m.skew[t]), fmt_opt(m.kurt[t])]);
    }
    w.write(path)
}

pub fn read_moment_panel(path: &Path) -> Result<MomentPanel> {
    let t = Table::read(path)?;
    let freq = parse_frequency(&t)?;
    let [v, s, k] = moment_stems(freq);
    t.expect_header(&[date_col(freq), "asset", v, s, k])?;
    let index = t.meta("index")?.to_string();
    let mut dates = std::collections::BTreeSet::new();
    let mut assets = std::collections::BTreeSet::new();
    let mut cells = BTreeMap::new();
    for i in 0..t.rows.len() {
        let d = t.date_at(i, 0)?;
        let a = t.rows[i][1].clone();
        dates.insert(d);
        if a != index {
            assets.insert(a.clone());
        }
        cells.insert((a, d), [t.opt_f64_at(i, 2)?, t.opt_f64_at(i, 3)?, t.opt_f64_at(i, 4)?]);
    }
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let assets: Vec<String> = assets.into_iter().collect();
    let get = |a: &String, d: &NaiveDate, m: usize| cells.get(&(a.clone(), *d)).and_then(|c| c[m]);
    let matrix = |m: usize| -> Vec<Vec<Option<f64>>> {
        dates.iter().map(|d| assets.iter().map(|a| get(a, d, m)).collect()).collect()
    };
    let series = |m: usize| -> Vec<Option<f64>> { dates.iter().map(|d| get(&index, d, m)).collect() };
    Ok(MomentPanel {
        frequency: freq,
        vol: matrix(0),
        skew: matrix(1),
        kurt: matrix(2),
        market: MomentSeries {
            vol: series(0),
            skew: series(1),
            kurt: series(2),
        },
        dates,
        assets,
    })
}

fn component_header(freq: Frequency) -> Vec<String> {
    let mut h = vec!["date".to_string(), "asset".to_string()];
    for stem in moment_stems(freq) {
        h.push(format!("{stem}_s"));
        h.push(format!("{stem}_l"));
    }
    h
}

pub fn write_components(path: &Path, c: &ComponentPanel, index: &str) -> Result<()> {
    let header = component_header(c.frequency);
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = TableWriter::new(&h)
        .meta("scale_j", c.scale)
        .meta("warmup", c.warmup_len)
        .meta("frequency", c.frequency.as_str())
        .meta("index", index);
    let fields = |comp: [&MaskedComponents; 3], t: usize| -> Vec<String> {
        comp.iter().flat_map(|m| [fmt_opt(m.short[t]), fmt_opt(m.long[t])]).collect()
    };
    for (t, d) in c.dates.iter().enumerate() {
        let ds = d.format(DATE_FMT).to_string();
        for (a, name) in c.assets.iter().enumerate() {
            let comp = Measure::ALL.map(|m| &c.by_asset[&m][a]);
            let f = fields(comp, t);
            if f.iter().all(String::is_empty) {
                continue;
            }
            let mut rec = vec![ds.clone(), name.clone()];
            rec.extend(f);
            w.row(rec);
        }
        let mut rec = vec![ds, index.to_string()];
        rec.extend(fields(Measure::ALL.map(|m| &c.market[&m]), t));
        w.row(rec);
    }
    w.write(path)
}

pub fn read_components(path: &Path) -> Result<ComponentPanel> {
    let t = Table::read(path)?;
    let freq = parse_frequency(&t)?;
    let header = component_header(freq);
    t.expect_header(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
    let index = t.meta("index")?.to_string();
    let mut dates = std::collections::BTreeSet::new();
    let mut assets = std::collections::BTreeSet::new();
    let mut cells: BTreeMap<(String, NaiveDate), Vec<Option<f64>>> = BTreeMap::new();
    for i in 0..t.rows.len() {
        let d = t.date_at(i, 0)?;
        let a = t.rows[i][1].clone();
        dates.insert(d);
        if a != index {
            assets.insert(a.clone());
        }
        cells.insert((a, d), (2..8).map(|j| t.opt_f64_at(i, j)).collect::<Result<_>>()?);
    }
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let assets: Vec<String> = assets.into_iter().collect();
    let series = |sym: &String, col: usize| -> Vec<Option<f64>> {
        dates
            .iter()
            .map(|d| cells.get(&(sym.clone(), *d)).and_then(|c| c[col]))
            .collect()
    };
    let masked = |sym: &String, m: usize| MaskedComponents {
        short: series(sym, 2 * m),
        long: series(sym, 2 * m + 1),
    };
    let mut by_asset = BTreeMap::new();
    let mut market = BTreeMap::new();
    for (mi, m) in Measure::ALL.into_iter().enumerate() {
        by_asset.insert(m, assets.iter().map(|a| masked(a, mi)).collect());
        market.insert(m, masked(&index, mi));
    }
    Ok(ComponentPanel {
        scale: t.meta_parse("scale_j")?,
        frequency: freq,
        warmup_len: t.meta_parse("warmup")?,
        dates,
        assets,
        by_asset,
        market,
    })
}

pub fn write_factor_matrix(path: &Path, f: &FactorMatrix) -> Result<()> {
    let mut header = vec!["date"];
    header.extend(f.names.iter().map(String::as_str));
    let spec = match &f.spec {
        ModelSpec::Sfmm => "sfmm",
        ModelSpec::Shsm => "shsm",
        ModelSpec::All => "all",
        ModelSpec::Custom(_) => "custom",
    };
    let mut w = TableWriter::new(&header)
        .meta("frequency", f.frequency.as_str())
        .meta("spec", spec)
        .meta("dropped_rows", f.dropped_rows);
    for (d, row) in f.dates.iter().zip(&f.values) {
        let mut rec = vec![d.format(DATE_FMT).to_string()];
        rec.extend(row.iter().map(|v| fmt_f64(*v)));
        w.row(rec);
    }
    w.write(path)
}

pub fn read_factor_matrix(path: &Path) -> Result<FactorMatrix> {
    let t = Table::read(path)?;
    t.expect_header(&["date"])?;
    let names: Vec<String> = t.header[1..].to_vec();
    let spec = match t.meta.get("spec").map(String::as_str) {
        Some("sfmm") => ModelSpec::Sfmm,
        Some("shsm") => ModelSpec::Shsm,
        Some("all") => ModelSpec::All,
        _ => ModelSpec::Custom(names.clone()),
    };
    let mut dates = Vec::with_capacity(t.rows.len());
    let mut values = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        dates.push(t.date_at(i, 0)?);
        values.push((1..=names.len()).map(|j| t.f64_at(i, j)).collect::<Result<Vec<_>>>()?);
    }
    Ok(FactorMatrix {
        frequency: parse_frequency(&t)?,
        dates,
        names,
        values,
        spec,
        dropped_rows: t.meta.get("dropped_rows").and_then(|v| v.parse().ok()).unwrap_or(0),
    })
}

/// Rows `sort_variable,quantile,mean_bps,tstat` with quantiles `1..n` then `HL`.
pub fn write_sorts(path: &Path, reports: &[SortReport], meta: &[(&str, String)]) -> Result<()> {
    let mut w = TableWriter::new(&["sort_variable", "quantile", "mean_bps", "tstat"]);
    for (k, v) in meta {
        w = w.meta(k, v);
    }
    for r in reports {
        w = w.meta(&format!("n_windows.{}", r.sort_variable), r.n_windows);
    }
    for r in reports {
        for (q, (m, t)) in r.means_bps.iter().zip(&r.tstats).enumerate() {
            w.row([r.sort_variable.clone(), (q + 1).to_string(), fmt_f64(*m), fmt_f64(*t)]);
        }
        w.row([r.sort_variable.clone(), "HL".into(), fmt_f64(r.high_low_bps), fmt_f64(r.high_low_t)]);
    }
    w.write(path)
}

pub fn read_sorts(path: &Path) -> Result<Vec<SortReport>> {
    let t = Table::read(path)?;
    t.expect_header(&["sort_variable", "quantile", "mean_bps", "tstat"])?;
    let mut out: Vec<SortReport> = Vec::new();
    for i in 0..t.rows.len() {
        let var = &t.rows[i][0];
        if out.last().is_none_or(|r| &r.sort_variable != var) {
            out.push(SortReport {
                sort_variable: var.clone(),
                means_bps: Vec::new(),
                tstats: Vec::new(),
                high_low_bps: f64::NAN,
                high_low_t: f64::NAN,
                n_windows: t.meta.get(&format!("n_windows.{var}")).and_then(|v| v.parse().ok()).unwrap_or(0),
            });
        }
        let r = out.last_mut().expect("pushed above");
        let (m, ts) = (t.f64_at(i, 2)?, t.f64_at(i, 3)?);
        match t.rows[i][1].as_str() {
            "HL" => {
                r.high_low_bps = m;
                r.high_low_t = ts;
            }
            q if q.parse::<usize>() == Ok(r.means_bps.len() + 1) => {
                r.means_bps.push(m);
                r.tstats.push(ts);
            }
            q => return Err(t.err(i, format!("unexpected quantile `{q}`"))),
        }
    }
    if let Some(r) = out.iter().find(|r| r.high_low_bps.is_nan()) {
        return Err(Error::parse(path, format!("`{}` has no HL row", r.sort_variable)));
    }
    Ok(out)
}

/// `factor,lambda,tstat` with the intercept as `const`.
pub fn write_static(path: &Path, e: &RiskPremiaEstimate, meta: &[(&str, String)]) -> Result<()> {
    let mut w = TableWriter::new(&["factor", "lambda", "tstat"])
        .meta("omega", fmt_f64(e.omega))
        .meta("r2", fmt_f64(e.r2))
        .meta("n_assets", e.n_assets);
    for (k, v) in meta {
        w = w.meta(k, v);
    }
    w.row(["const".to_string(), fmt_f64(e.omega), fmt_f64(e.omega_t)]);
    for (j, n) in e.factor_names.iter().enumerate() {
        w.row([n.clone(), fmt_f64(e.lambda[j]), fmt_f64(e.tstats[j])]);
    }
    w.write(path)
}

fn coefficient_rows(t: &Table) -> Result<(f64, f64, Vec<String>, Vec<f64>, Vec<f64>)> {
    if t.rows.first().is_none_or(|r| r[0] != "const") {
        return Err(Error::parse(&t.path, "first row must be `const`"));
    }
    let (mut names, mut coef, mut ts) = (Vec::new(), Vec::new(), Vec::new());
    for i in 1..t.rows.len() {
        names.push(t.rows[i][0].clone());
        coef.push(t.f64_at(i, 1)?);
        ts.push(t.f64_at(i, 2)?);
    }
    Ok((t.f64_at(0, 1)?, t.f64_at(0, 2)?, names, coef, ts))
}

pub fn read_static(path: &Path) -> Result<RiskPremiaEstimate> {
    let t = Table::read(path)?;
    t.expect_header(&["factor", "lambda", "tstat"])?;
    let (omega, omega_t, factor_names, lambda, tstats) = coefficient_rows(&t)?;
    Ok(RiskPremiaEstimate {
        factor_names,
        omega,
        omega_t,
        lambda,
        tstats,
        r2: t.meta_parse("r2")?,
        n_assets: t.meta_parse("n_assets")?,
    })
}

pub fn write_dynamic(path: &Path, e: &DynamicEstimate, meta: &[(&str, String)]) -> Result<()> {
    let mut w = TableWriter::new(&["factor", "lambda_bar", "tstat"])
        .meta("seed", e.seed)
        .meta("bandwidth", fmt_f64(e.bandwidth))
        .meta("n_assets", e.n_assets);
    for (k, v) in meta {
        w = w.meta(k, v);
    }
    w.row(["const".to_string(), fmt_f64(e.omega_bar), fmt_f64(e.omega_t)]);
    for (j, n) in e.factor_names.iter().enumerate() {
        w.row([n.clone(), fmt_f64(e.lambda_bar[j]), fmt_f64(e.tstats[j])]);
    }
    w.write(path)
}

/// Summary only; the path lives in its own file.
pub fn read_dynamic(path: &Path) -> Result<DynamicEstimate> {
    let t = Table::read(path)?;
    t.expect_header(&["factor", "lambda_bar", "tstat"])?;
    let (omega_bar, omega_t, factor_names, lambda_bar, tstats) = coefficient_rows(&t)?;
    Ok(DynamicEstimate {
        factor_names,
        lambda_bar,
        tstats,
        omega_bar,
        omega_t,
        path: Vec::new(),
        bandwidth: t.meta_parse("bandwidth")?,
        seed: t.meta_parse("seed")?,
        n_assets: t.meta_parse("n_assets")?,
    })
}

pub fn write_dynamic_path(path: &Path, e: &DynamicEstimate) -> Result<()> {
    let mut w = TableWriter::new(&["date", "factor", "lambda_t", "post_sd"])
        .meta("seed", e.seed)
        .meta("bandwidth", fmt_f64(e.bandwidth));
    for p in &e.path {
        let ds = p.date.format(DATE_FMT).to_string();
        for (j, n) in e.factor_names.iter().enumerate() {
            w.row([ds.clone(), n.clone(), fmt_f64(p.lambda[j]), fmt_f64(p.post_sd[j])]);
        }
    }
    w.write(path)
}

pub fn read_dynamic_path(path: &Path) -> Result<Vec<LambdaPath>> {
    let t = Table::read(path)?;
    t.expect_header(&["date", "factor", "lambda_t", "post_sd"])?;
    let mut out: Vec<LambdaPath> = Vec::new();
    for i in 0..t.rows.len() {
        let d = t.date_at(i, 0)?;
        if out.last().is_none_or(|p| p.date != d) {
            out.push(LambdaPath { date: d, lambda: Vec::new(), post_sd: Vec::new() });
        }
        let p = out.last_mut().expect("pushed above");
        p.lambda.push(t.f64_at(i, 2)?);
        p.post_sd.push(t.f64_at(i, 3)?);
    }
    Ok(out)
}
