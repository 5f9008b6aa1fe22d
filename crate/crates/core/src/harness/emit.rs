//! Result tables.
//!
//! CSV columns, in order:
//!
//! ```text
//! realization, scheme, param, channel_sha256, feasible,
//! total_power_w, total_power_dbm,
//! sinr_db_1..N, coverage_1..N, eh_w_1..N
//! ```
//!
//! Missing values are empty fields. Numbers use the shortest representation
//! that parses back to the same `f64`, so files round-trip exactly. The JSON
//! form carries the same rows plus the summary table.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{CellSummary, ExperimentResult, ResultRow};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Parse(format!("unknown format {other:?}"))),
        }
    }
}

pub fn header(n_users: usize) -> Vec<String> {
    let mut h: Vec<String> = ["realization", "scheme", "param", "channel_sha256", "feasible", "total_power_w", "total_power_dbm"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["sinr_db", "coverage", "eh_w"] {
        h.extend((1..=n_users).map(|k| format!("{prefix}_{k}")));
    }
    h
}

fn num(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(res: &ExperimentResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header(res.n_users))?;
    for row in &res.rows {
        let mut rec = vec![
            row.realization.to_string(),
            row.scheme.clone(),
            num(row.param),
            row.channel_sha256.clone(),
            row.feasible.to_string(),
            num(row.total_power_w),
            num(row.total_power_dbm),
        ];
        for col in [&row.sinr_db, &row.coverage, &row.eh_w] {
            if col.len() != res.n_users {
                return Err(Error::DimensionMismatch { expected: res.n_users, found: col.len() });
            }
            rec.extend(col.iter().map(|x| num(*x)));
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

fn parse_num(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| Error::Parse(format!("bad number {field:?}")))
}

pub fn read_csv<R: Read>(r: R) -> Result<ExperimentResult> {
    let mut rd = csv::Reader::from_reader(r);
    let head = rd.headers()?.clone();
    let n_users = head.len().saturating_sub(7) / 3;
    let want = header(n_users);
    if head.iter().ne(want.iter().map(String::as_str)) {
        return Err(Error::Parse("unexpected result columns".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let nums = |from: usize| (from..from + n_users).map(|i| parse_num(&rec[i])).collect::<Result<Vec<_>>>();
        rows.push(ResultRow {
            realization: rec[0].parse().map_err(|_| Error::Parse(format!("bad realization {:?}", &rec[0])))?,
            scheme: rec[1].to_string(),
            param: parse_num(&rec[2])?,
            channel_sha256: rec[3].to_string(),
            feasible: rec[4].parse().map_err(|_| Error::Parse(format!("bad flag {:?}", &rec[4])))?,
            total_power_w: parse_num(&rec[5])?,
            total_power_dbm: parse_num(&rec[6])?,
            sinr_db: nums(7)?,
            coverage: nums(7 + n_users)?,
            eh_w: nums(7 + 2 * n_users)?,
        });
    }
    Ok(ExperimentResult { n_users, rows })
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    n_users: usize,
    rows: &'a [ResultRow],
    summary: Vec<CellSummary>,
}

pub fn write_json<W: Write>(res: &ExperimentResult, w: W) -> Result<()> {
    let doc = JsonDoc { n_users: res.n_users, rows: &res.rows, summary: res.summary() };
    let mut w = w;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    Ok(())
}

pub fn emit(res: &ExperimentResult, format: Format, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(res, &mut w)?,
        Format::Json => write_json(res, &mut w)?,
    }
    w.flush()?;
    Ok(())
}
