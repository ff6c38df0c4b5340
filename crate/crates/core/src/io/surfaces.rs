use std::fmt::Write as _;

use super::{fields, parse_document, parse_field, write_document, Metadata};
use crate::coherence::CoalescenceSurface;
use crate::error::{Error, Result};
use crate::surface::{Configuration, CorrelationSurface, Origin, Quantity, TimeAxis};

const MAGIC: &str = "#g2dyn-surface v1";
const COLUMNS: &str = "i,j,count,g2,ci_low,ci_high,valid";
const COALESCENCE: &str = "coalescence";

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceFile {
    Correlation(CorrelationSurface, Metadata),
    Coalescence(CoalescenceSurface, Metadata),
}

impl SurfaceFile {
    pub fn metadata(&self) -> &Metadata {
        match self {
            SurfaceFile::Correlation(_, m) | SurfaceFile::Coalescence(_, m) => m,
        }
    }
}

fn axis_metadata(axis: &TimeAxis) -> Metadata {
    let mut m = Metadata::new();
    m.set("bin_width_ns", axis.bin_width());
    m.set("period_ns", axis.period());
    m.set("window_start_ns", axis.start());
    m.set("n_bins", axis.n_bins());
    m
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_surface(surface: &CorrelationSurface, extra: &Metadata) -> String {
    let mut meta = axis_metadata(&surface.axis);
    meta.set("quantity", surface.quantity);
    meta.set("configuration", surface.configuration);
    meta.set("origin", surface.origin);
    meta.set("n_events", surface.n_events);
    meta.set("marginal1", join(&surface.marginal1));
    meta.set("marginal2", join(&surface.marginal2));
    meta.extend_missing(extra);
    let n = surface.n_bins();
    let mut body = String::with_capacity(n * n * 32);
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let _ = writeln!(
                body,
                "{i},{j},{},{},{},{},{}",
                surface.numerator[k],
                surface.g2[k],
                surface.ci_low[k],
                surface.ci_high[k],
                surface.valid[k] as u8
            );
        }
    }
    write_document(MAGIC, &meta, COLUMNS, &body)
}

/// Coalescence surfaces use the same layout; the `count` column is `NaN`.
pub fn write_coalescence(surface: &CoalescenceSurface, extra: &Metadata) -> String {
    let mut meta = axis_metadata(&surface.axis);
    meta.set("quantity", COALESCENCE);
    meta.extend_missing(extra);
    let n = surface.n_bins();
    let mut body = String::with_capacity(n * n * 32);
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let _ = writeln!(
                body,
                "{i},{j},NaN,{},{},{},{}",
                surface.values[k], surface.ci_low[k], surface.ci_high[k], surface.valid[k] as u8
            );
        }
    }
    write_document(MAGIC, &meta, COLUMNS, &body)
}

struct Rows {
    count: Vec<f64>,
    value: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
    valid: Vec<bool>,
}

fn parse_rows(records: &[(usize, &str)], n: usize) -> Result<Rows> {
    if records.len() != n * n {
        let line = records.last().map_or(1, |r| r.0);
        return Err(Error::parse_line(
            line,
            format!("expected {} records, found {}", n * n, records.len()),
        ));
    }
    let mut rows = Rows {
        count: Vec::with_capacity(n * n),
        value: Vec::with_capacity(n * n),
        low: Vec::with_capacity(n * n),
        high: Vec::with_capacity(n * n),
        valid: Vec::with_capacity(n * n),
    };
    for (k, &(line, text)) in records.iter().enumerate() {
        let [i, j, c, g, lo, hi, v] = fields::<7>(line, text)?;
        let (i, j): (usize, usize) = (parse_field(line, "i", i)?, parse_field(line, "j", j)?);
        if (i, j) != (k / n, k % n) {
            return Err(Error::parse_line(
                line,
                format!("expected bin ({}, {})", k / n, k % n),
            ));
        }
        rows.count.push(parse_field(line, "count", c)?);
        rows.value.push(parse_field(line, "g2", g)?);
        rows.low.push(parse_field(line, "ci_low", lo)?);
        rows.high.push(parse_field(line, "ci_high", hi)?);
        rows.valid.push(match v {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::parse_line(
                    line,
                    format!("valid must be 0 or 1, got '{other}'"),
                ))
            }
        });
    }
    Ok(rows)
}

fn parse_list(meta: &Metadata, key: &str, n: usize) -> Result<Vec<f64>> {
    let raw: String = meta.require(key)?;
    let values: Vec<f64> = raw
        .split(',')
        .map(|v| v.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse_line(meta.line_of(key), format!("bad list for '{key}'")))?;
    if values.len() != n {
        return Err(Error::parse_line(
            meta.line_of(key),
            format!("'{key}' needs {n} values"),
        ));
    }
    Ok(values)
}

pub fn read_surface(text: &str) -> Result<SurfaceFile> {
    let (meta, records) = parse_document(text, MAGIC, COLUMNS)?;
    let bin: f64 = meta.require("bin_width_ns")?;
    let period: f64 = meta.require("period_ns")?;
    let start: f64 = meta.optional("window_start_ns")?.unwrap_or(0.0);
    let axis = TimeAxis::new(bin, period)
        .and_then(|a| a.with_start(start))
        .map_err(|e| Error::parse_line(meta.line_of("bin_width_ns"), e.to_string()))?;
    let n = axis.n_bins();
    if meta.require::<usize>("n_bins")? != n {
        return Err(Error::parse_line(
            meta.line_of("n_bins"),
            format!("n_bins disagrees with the axis ({n})"),
        ));
    }
    let rows = parse_rows(&records, n)?;
    let quantity: String = meta.require("quantity")?;
    if quantity == COALESCENCE {
        let surface = CoalescenceSurface {
            axis,
            values: rows.value,
            ci_low: rows.low,
            ci_high: rows.high,
            valid: rows.valid,
        };
        return Ok(SurfaceFile::Coalescence(surface, meta));
    }
    let quantity: Quantity = meta.require("quantity")?;
    let configuration: Configuration = meta.require("configuration")?;
    let origin: Origin = meta.require("origin")?;
    let n_events: f64 = meta.require("n_events")?;
    let m1 = parse_list(&meta, "marginal1", n)?;
    let m2 = parse_list(&meta, "marginal2", n)?;
    let mut surface = CorrelationSurface::from_parts(
        axis,
        configuration,
        quantity,
        origin,
        rows.count,
        m1,
        m2,
        n_events,
    )?;
    // Keep the stored ratios and intervals verbatim.
    surface.g2 = rows.value;
    surface.ci_low = rows.low;
    surface.ci_high = rows.high;
    surface.valid = rows.valid;
    Ok(SurfaceFile::Correlation(surface, meta))
}
