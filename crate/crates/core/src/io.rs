//! File formats.
//!
//! - Time series CSV: header `t_s,n_cm2[,sigma_cm2]`; an empty sigma cell
//!   means unweighted.
//! - Momentum trace CSV: header `p_hbark,od`.
//! - OD image: either a headerless CSV matrix (one image row per line) or the
//!   binary container `b"STKODIM1"`, `rows: u64 LE`, `cols: u64 LE`, then
//!   `rows * cols` `f64 LE` values in row-major order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::bandmap::{MomentumTrace, OdImage};
use crate::error::{Error, Result};
use crate::fitting::{Sample, TimeSeries};
use crate::units;

pub const IMAGE_MAGIC: &[u8; 8] = b"STKODIM1";

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), message: message.into() }
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| parse_err(path, e.to_string()))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(!headers)
        .from_reader(file))
}

fn column(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<Option<usize>> {
    let found: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| *h == name).map(|(i, _)| i).collect();
    match found.len() {
        0 => Ok(None),
        1 => Ok(Some(found[0])),
        _ => Err(parse_err(path, format!("duplicate column '{name}'"))),
    }
}

fn required(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    column(path, headers, name)?.ok_or_else(|| {
        let seen: Vec<&str> = headers.iter().collect();
        parse_err(path, format!("missing column '{name}' (found {seen:?})"))
    })
}

fn number(path: &Path, line: u64, name: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(path, format!("line {line}: column '{name}': '{cell}' is not a finite number")))
}

/// Reads a loss curve; densities are converted from cm^-2 to m^-2.
pub fn read_time_series(path: &Path, label: &str) -> Result<TimeSeries> {
    let mut rdr = reader(path, true)?;
    let headers = rdr.headers().map_err(|e| parse_err(path, e.to_string()))?.clone();
    let t_col = required(path, &headers, "t_s")?;
    let n_col = required(path, &headers, "n_cm2")?;
    let s_col = column(path, &headers, "sigma_cm2")?;
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = number(path, line, "t_s", &rec[t_col])?;
        let n = number(path, line, "n_cm2", &rec[n_col])?;
        let sigma = match s_col.map(|c| rec.get(c).unwrap_or("")) {
            None | Some("") => None,
            Some(cell) => Some(units::per_cm2(number(path, line, "sigma_cm2", cell)?)),
        };
        samples.push(Sample { t, n: units::per_cm2(n), sigma });
    }
    if samples.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }
    TimeSeries::new(label, samples).map_err(|e| parse_err(path, e.to_string()))
}

pub fn write_time_series(path: &Path, ts: &TimeSeries) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t_s,n_cm2,sigma_cm2")?;
    for s in ts.samples() {
        match s.sigma {
            Some(sig) => writeln!(out, "{:e},{:e},{:e}", s.t, units::to_per_cm2(s.n), units::to_per_cm2(sig))?,
            None => writeln!(out, "{:e},{:e},", s.t, units::to_per_cm2(s.n))?,
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<MomentumTrace> {
    let mut rdr = reader(path, true)?;
    let headers = rdr.headers().map_err(|e| parse_err(path, e.to_string()))?.clone();
    let p_col = required(path, &headers, "p_hbark")?;
    let od_col = required(path, &headers, "od")?;
    let (mut p, mut od) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        p.push(number(path, line, "p_hbark", &rec[p_col])?);
        od.push(number(path, line, "od", &rec[od_col])?);
    }
    if p.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }
    MomentumTrace::new(p, od).map_err(|e| parse_err(path, e.to_string()))
}

/// Writes `p_hbark,od` plus a `model_od` column when a model is given.
pub fn write_trace(path: &Path, trace: &MomentumTrace, model: Option<&[f64]>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match model {
        Some(m) => {
            writeln!(out, "p_hbark,od,model_od")?;
            for ((p, od), m) in trace.momentum().iter().zip(trace.od()).zip(m) {
                writeln!(out, "{p:e},{od:e},{m:e}")?;
            }
        }
        None => {
            writeln!(out, "p_hbark,od")?;
            for (p, od) in trace.momentum().iter().zip(trace.od()) {
                writeln!(out, "{p:e},{od:e}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads either image format, chosen by the leading magic bytes.
pub fn read_image(path: &Path, pixel_size: f64, calibration: f64) -> Result<OdImage> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| parse_err(path, e.to_string()))?;
    let (rows, cols, data) =
        if bytes.starts_with(IMAGE_MAGIC) { decode_binary(path, &bytes)? } else { decode_csv_matrix(path)? };
    OdImage::new(rows, cols, data, pixel_size, calibration).map_err(|e| parse_err(path, e.to_string()))
}

fn decode_binary(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 24 {
        return Err(parse_err(path, "truncated image header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(8) as usize, word(16) as usize);
    let expected = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).and_then(|n| n.checked_add(24));
    if expected != Some(bytes.len()) {
        return Err(parse_err(path, format!("{rows}x{cols} image needs {expected:?} bytes, file has {}", bytes.len())));
    }
    let data = bytes[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((rows, cols, data))
}

fn decode_csv_matrix(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut rdr = reader(path, false)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(parse_err(path, format!("line {line}: {} columns, expected {c}", rec.len())));
            }
            _ => {}
        }
        for cell in rec.iter() {
            data.push(number(path, line, "od", cell)?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(path, "no data rows"))?;
    Ok((rows, cols, data))
}

pub fn write_image_binary(path: &Path, image: &OdImage) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(IMAGE_MAGIC)?;
    out.write_all(&(image.rows() as u64).to_le_bytes())?;
    out.write_all(&(image.cols() as u64).to_le_bytes())?;
    for v in image.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_image_csv(path: &Path, image: &OdImage) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in 0..image.rows() {
        let line: Vec<String> = image.row(r).iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}
