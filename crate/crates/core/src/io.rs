// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! File plumbing shared by every artifact: atomic writes and numeric CSV.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes via a sibling temp file and a rename, so readers never observe
/// a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
        w.into_inner()
            .map_err(|e| Error::Io(e.into_error()))?
            .sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Writes a numeric CSV. Each row is pre-formatted by the caller.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(header).map_err(csv_io)?;
        for row in rows {
            wr.write_record(row).map_err(csv_io)?;
        }
        wr.flush()?;
        Ok(())
    })
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads a numeric CSV whose header must equal `header` exactly.
pub fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(0, format!("{other:?}")),
        })?;
    let found: Vec<String> = rd
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if found != header {
        return Err(parse_err(
            1,
            format!("expected header {}, found {}", header.join(","), found.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("not a finite number: {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Shortest representation that round-trips through `f64::from_str`.
pub fn fmt_value(v: f64) -> String {
    format!("{v:e}")
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_time(t: f64) -> String {
    format!("{t:e}")
}

/// Checks that `times` form a uniform grid and returns `(t0, dt)`.
pub(crate) fn uniform_spacing(path: &Path, times: &[f64]) -> Result<(f64, f64)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64 + 2,
        message,
    };
    match times {
        [] => Err(err(0, "no samples".into())),
        [t0] => Err(err(0, format!("cannot infer a sample period from one sample at {t0:e}"))),
        [t0, rest @ ..] => {
            let n = times.len();
            let dt = (times[n - 1] - t0) / (n - 1) as f64;
            if !(dt > 0.0) {
                return Err(err(0, "time column must increase".into()));
            }
            for (k, &t) in rest.iter().enumerate() {
                let k = k + 1;
                if (t - (t0 + k as f64 * dt)).abs() > 1e-6 * dt {
                    return Err(err(k, format!("sample time {t:e} is off the uniform grid")));
                }
            }
            Ok((*t0, exact_step(times, dt)))
        }
    }
}

/// The `f64` step within a few ulps of `dt` that regenerates every time
/// as `t0 + k dt` bit for bit, if there is one. Grids written from
/// `t0 + k dt` thus survive a read/write cycle unchanged.
fn exact_step(times: &[f64], dt: f64) -> f64 {
    let t0 = times[0];
    let fits = |d: f64| times.iter().enumerate().all(|(k, &t)| t0 + k as f64 * d == t);
    let bits = dt.to_bits();
    for off in 0..=16u64 {
        for cand in [bits.wrapping_add(off), bits.wrapping_sub(off)] {
            let d = f64::from_bits(cand);
            if d > 0.0 && fits(d) {
                return d;
            }
        }
    }
    dt
}
