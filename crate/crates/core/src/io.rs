//! CSV formats for curves, responses and raw records.
//!
//! Curves: first line `t,<t_1>,...,<t_m>`, then one `<id>,<x(t_1)>,...,<x(t_m)>`
//! line per curve. Responses: `id,y` (header line optional). Raw records for
//! Fourier smoothing use a long layout with header `id,time,value`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use crate::design::{FunctionalDataset, RawRecord};
use crate::error::{Error, Result};

fn line_of(rec: &StringRecord) -> Option<u64> {
    rec.position().map(|p| p.line())
}

fn parse_f64(rec: &StringRecord, field: usize) -> Result<f64> {
    let raw = rec.get(field).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| {
        Error::ingestion(
            line_of(rec),
            format!("field {} is not a number: {raw:?}", field + 1),
        )
    })?;
    if !v.is_finite() {
        return Err(Error::ingestion(
            line_of(rec),
            format!("field {} is not finite", field + 1),
        ));
    }
    Ok(v)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// Reads the curve CSV layout. Responses are not attached.
pub fn read_curves<R: Read>(r: R) -> Result<FunctionalDataset> {
    let mut rdr = reader(r);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::ingestion(Some(1), "empty curve file"))??;
    if header.get(0) != Some("t") {
        return Err(Error::ingestion(Some(1), "first line must start with `t`"));
    }
    let grid = (1..header.len())
        .map(|j| parse_f64(&header, j))
        .collect::<Result<Vec<_>>>()?;
    let m = grid.len();
    let mut ids = Vec::new();
    let mut curves = Vec::new();
    for rec in records {
        let rec = rec?;
        if rec.len() != m + 1 {
            return Err(Error::ingestion(
                line_of(&rec),
                format!("expected {} fields, found {}", m + 1, rec.len()),
            ));
        }
        ids.push(rec[0].to_string());
        for j in 1..=m {
            curves.push(parse_f64(&rec, j)?);
        }
    }
    FunctionalDataset::new(grid, curves, None)?.with_ids(ids)
}

pub fn read_curves_path(path: impl AsRef<Path>) -> Result<FunctionalDataset> {
    read_curves(File::open(path)?)
}

pub fn write_curves<W: Write>(w: W, dataset: &FunctionalDataset) -> Result<()> {
    let mut wtr = WriterBuilder::new().from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(dataset.grid().iter().map(|t| t.to_string()));
    wtr.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut row = vec![dataset.ids()[i].clone()];
        row.extend(dataset.curve(i).iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `id,y` pairs; a leading `id,y` header line is skipped.
pub fn read_responses<R: Read>(r: R) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (k, rec) in reader(r).records().enumerate() {
        let rec = rec?;
        if k == 0 && rec.get(0) == Some("id") {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::ingestion(
                line_of(&rec),
                format!("expected 2 fields, found {}", rec.len()),
            ));
        }
        out.push((rec[0].to_string(), parse_f64(&rec, 1)?));
    }
    Ok(out)
}

pub fn read_responses_path(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    read_responses(File::open(path)?)
}

pub fn write_responses<W: Write>(w: W, dataset: &FunctionalDataset) -> Result<()> {
    let y = dataset.require_responses()?;
    let mut wtr = WriterBuilder::new().from_writer(w);
    wtr.write_record(["id", "y"])?;
    for (id, v) in dataset.ids().iter().zip(y) {
        wtr.write_record([id.clone(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads long-format raw records (`id,time,value`), grouping rows by id in
/// order of first appearance.
pub fn read_raw_records<R: Read>(r: R) -> Result<Vec<RawRecord>> {
    let mut out: Vec<RawRecord> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (k, rec) in reader(r).records().enumerate() {
        let rec = rec?;
        if k == 0 {
            if rec.iter().collect::<Vec<_>>() != ["id", "time", "value"] {
                return Err(Error::ingestion(Some(1), "header must be `id,time,value`"));
            }
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::ingestion(
                line_of(&rec),
                format!("expected 3 fields, found {}", rec.len()),
            ));
        }
        let id = rec[0].to_string();
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            out.push(RawRecord {
                id,
                times: Vec::new(),
                values: Vec::new(),
            });
            out.len() - 1
        });
        out[slot].times.push(parse_f64(&rec, 1)?);
        out[slot].values.push(parse_f64(&rec, 2)?);
    }
    Ok(out)
}

pub fn read_raw_records_path(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    read_raw_records(File::open(path)?)
}
