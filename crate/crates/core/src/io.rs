//! CSV formats.
//!
//! Records: header `bwd,fwd_obs,event,age_cat`; `event` is 0 or 1, `age_cat`
//! may be blank (the column itself may also be omitted); durations in years.
//!
//! Age distributions: header `segment_start,segment_end,<cat_1>,...,<cat_l>`;
//! one row per calendar segment with category probabilities. `segment_end`
//! may be `inf`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{AgeDistribution, AgeSegment, PrevalentRecord};

pub const RECORD_HEADER: [&str; 4] = ["bwd", "fwd_obs", "event", "age_cat"];

fn parse_err(line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => parse_err(line, 0, e.to_string()),
    }
}

fn parse_f64(field: &str, line: u64, column: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, column, format!("expected a number, got {field:?}")))?;
    if v.is_nan() {
        return Err(parse_err(line, column, "NaN is not a duration"));
    }
    Ok(v)
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<PrevalentRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 3 || names[..3] != RECORD_HEADER[..3] || (names.len() >= 4 && names[3] != "age_cat") || names.len() > 4 {
        return Err(parse_err(1, 0, format!("expected header {}, got {}", RECORD_HEADER.join(","), names.join(","))));
    }
    let with_cat = names.len() == 4;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        let expected = if with_cat { 4 } else { 3 };
        if row.len() != expected {
            return Err(parse_err(line, row.len().min(expected) + 1, format!("expected {expected} fields, got {}", row.len())));
        }
        let bwd = parse_f64(&row[0], line, 1)?;
        let fwd_obs = parse_f64(&row[1], line, 2)?;
        let event = match row[2].trim() {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(line, 3, format!("event must be 0 or 1, got {other:?}"))),
        };
        let age_cat = if with_cat { Some(row[3].trim()).filter(|s| !s.is_empty()).map(str::to_owned) } else { None };
        out.push(PrevalentRecord { bwd, fwd_obs, event, age_cat });
    }
    Ok(out)
}

pub fn write_records<W: Write>(writer: W, records: &[PrevalentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER).map_err(csv_err)?;
    for r in records {
        let bwd = r.bwd.to_string();
        let fwd = r.fwd_obs.to_string();
        let cat = r.age_cat.as_deref().unwrap_or("");
        w.write_record([bwd.as_str(), fwd.as_str(), if r.event { "1" } else { "0" }, cat]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_age_distribution<R: Read>(reader: R) -> Result<AgeDistribution> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 3 || names[0] != "segment_start" || names[1] != "segment_end" {
        return Err(parse_err(1, 0, "expected header segment_start,segment_end,<categories...>"));
    }
    let categories: Vec<String> = names[2..].iter().map(|s| s.to_string()).collect();
    let mut segments = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        let start = parse_f64(&row[0], line, 1)?;
        let end = parse_f64(&row[1], line, 2)?;
        let probs = (2..row.len()).map(|c| parse_f64(&row[c], line, c + 1)).collect::<Result<Vec<_>>>()?;
        segments.push(AgeSegment { start, end, probs });
    }
    AgeDistribution::new(categories, segments)
}
