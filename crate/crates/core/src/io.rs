//! CSV readers and writers for triangles, traces and reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back from a trace file is bit-identical to the one written.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diagnostics::{DiagnosticsRow, TraceMatrix};
use crate::error::{Error, Result};
use crate::reserving::{EigenBlockSummary, ReserveStats, ReserveSummary};
use crate::triangle::{validate_triangle, ClaimsTriangle, RawCell};

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    let msg = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        _ => Error::Parse { path: path.display().to_string(), line, msg },
    }
}

/// Reads `accident,development,source,value` rows and validates the triangle.
pub fn read_triangle_csv(path: &Path) -> Result<ClaimsTriangle> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let cells = rdr
        .deserialize::<RawCell>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))?;
    validate_triangle(&cells)
}

pub fn triangle_csv(tri: &ClaimsTriangle) -> String {
    let mut s = String::from("accident,development,source,value\n");
    for c in tri.cells() {
        let _ = writeln!(s, "{},{},{},{}", c.accident, c.development, c.source, c.value);
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// One header line of names, then one line per sweep.
pub fn trace_csv(names: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = names.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&join(r));
        s.push('\n');
    }
    s
}

/// Reads one chain's trace. Ragged or non-numeric rows are parse errors
/// carrying the 1-based line number.
pub fn read_trace_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let names: Vec<String> = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |msg: String| Error::Parse { path: path.display().to_string(), line, msg };
        if rec.len() != names.len() {
            return Err(parse_err(format!("expected {} fields, found {}", names.len(), rec.len())));
        }
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("`{f}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

pub fn trace_file_name(chain: usize) -> String {
    format!("trace_chain{chain}.csv")
}

/// Loads `trace_chain0.csv`, `trace_chain1.csv`, ... from `dir`.
pub fn read_trace_dir(dir: &Path) -> Result<TraceMatrix> {
    let mut names: Option<Vec<String>> = None;
    let mut chains = Vec::new();
    loop {
        let p = dir.join(trace_file_name(chains.len()));
        if !p.exists() {
            break;
        }
        let (n, rows) = read_trace_csv(&p)?;
        if let Some(prev) = &names {
            if *prev != n {
                return Err(Error::Parse { path: p.display().to_string(), line: 1, msg: "header differs from chain 0".into() });
            }
            let want = chains.first().map_or(0, Vec::len);
            if rows.len() != want {
                return Err(Error::Parse {
                    path: p.display().to_string(),
                    line: rows.len() as u64 + 1,
                    msg: format!("expected {want} sweeps, found {}", rows.len()),
                });
            }
        }
        names = Some(n);
        chains.push(rows);
    }
    match names {
        None => Err(Error::MissingTrace(dir.display().to_string())),
        Some(n) => TraceMatrix::new(n, chains),
    }
}

pub fn diagnostics_csv(rows: &[DiagnosticsRow], lag: usize) -> String {
    let mut s = format!("name,rhat,acf_lag{lag},ess,pass\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.name, r.rhat, r.acf_lag, r.ess, r.pass);
    }
    s
}

fn stats_line(label: &str, st: &ReserveStats) -> String {
    format!("{label},{},{},{}\n", st.mean, st.sd, join(&st.q))
}

/// Per-accident-year rows followed by a `total` row.
pub fn reserves_csv(r: &ReserveSummary) -> String {
    let mut s = String::from("accident_year,mean,sd,q05,q25,q50,q75,q95\n");
    for (i, st) in r.per_accident.iter().enumerate() {
        s.push_str(&stats_line(&i.to_string(), st));
    }
    s.push_str(&stats_line("total", &r.total));
    s
}

pub fn histogram_csv(bins: &[(f64, f64, usize)]) -> String {
    let mut s = String::from("bin_left,bin_right,count\n");
    for (l, r, c) in bins {
        let _ = writeln!(s, "{l},{r},{c}");
    }
    s
}

/// Eigenvector entries are separated by `;` within one field.
pub fn eigen_csv(rows: &[EigenBlockSummary]) -> String {
    let mut s = String::from("block,lambda_mean,lambda_sd,lambda_q05,lambda_q95,principal_vector\n");
    for r in rows {
        let v = r.vector.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let _ = writeln!(s, "{},{},{},{},{},{v}", r.label, r.mean, r.sd, r.q05, r.q95);
    }
    s
}
