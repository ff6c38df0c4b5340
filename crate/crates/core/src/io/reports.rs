use std::fmt::Write as _;

use super::{fields, parse_document, parse_field, write_document, Metadata};
use crate::correlator::SurfaceCut;
use crate::error::{Error, Result};
use crate::fitting::FitResult;

const FIT_MAGIC: &str = "#g2dyn-fit v1";
const FIT_COLUMNS: &str = "parameter,value,uncertainty";

pub fn write_fit_report(fit: &FitResult, extra: &Metadata) -> String {
    let mut meta = Metadata::new();
    meta.set("converged", fit.converged);
    meta.set("iterations", fit.iterations);
    meta.set("residual", fit.residual);
    meta.set("degrees_of_freedom", fit.degrees_of_freedom);
    meta.extend_missing(extra);
    let mut body = String::new();
    for ((n, v), u) in fit.names.iter().zip(&fit.values).zip(&fit.uncertainties) {
        let _ = writeln!(body, "{n},{v},{u}");
    }
    write_document(FIT_MAGIC, &meta, FIT_COLUMNS, &body)
}

/// Parses a fit report; the iteration history is not stored.
pub fn read_fit_report(text: &str) -> Result<(FitResult, Metadata)> {
    let (meta, records) = parse_document(text, FIT_MAGIC, FIT_COLUMNS)?;
    let mut fit = FitResult {
        names: Vec::new(),
        values: Vec::new(),
        uncertainties: Vec::new(),
        residual: meta.require("residual")?,
        degrees_of_freedom: meta.require("degrees_of_freedom")?,
        iterations: meta.require("iterations")?,
        converged: meta.require("converged")?,
        history: Vec::new(),
    };
    for (n, line) in records {
        let [name, v, u] = fields::<3>(n, line)?;
        if name.is_empty() {
            return Err(Error::parse_line(n, "empty parameter name"));
        }
        fit.names.push(name.to_string());
        fit.values.push(parse_field(n, "value", v)?);
        fit.uncertainties.push(parse_field(n, "uncertainty", u)?);
    }
    Ok((fit, meta))
}

/// Plot-ready CSV of a cut: a column header then one row per sample.
pub fn write_cut_csv(cut: &SurfaceCut) -> String {
    let mut out = String::from("coordinate_ns,t1_bin,t2_bin,value,ci_low,ci_high\n");
    for s in &cut.samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.coordinate, s.i, s.j, s.value, s.ci_low, s.ci_high
        );
    }
    out
}

/// Plot-ready CSV of a full grid: first row holds the channel-2 bin centers,
/// first column the channel-1 bin centers; invalid bins are empty.
pub fn write_matrix_csv(centers: &[f64], values: &[f64], valid: &[bool]) -> String {
    let n = centers.len();
    let mut out = String::from("t1\\t2");
    for c in centers {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for i in 0..n {
        let _ = write!(out, "{}", centers[i]);
        for j in 0..n {
            let k = i * n + j;
            if valid[k] {
                let _ = write!(out, ",{}", values[k]);
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}
