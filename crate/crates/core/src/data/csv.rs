//! Signals as CSV: one header row of channel names, one row per sample.

use std::path::Path;

use nalgebra::DMatrix;

use crate::{Error, Result, SignalMatrix};

/// Plain decimal with 17 significant digits, enough to round-trip any f64.
pub fn format_number(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.1}");
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (16 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn write_signal_csv(path: &Path, x: &SignalMatrix, names: &[String]) -> Result<()> {
    let d = x.channels();
    let header: Vec<String> = if names.len() == d {
        names.to_vec()
    } else {
        (0..d).map(|i| format!("ch{i}")).collect()
    };
    let mut w = ::csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    let m = x.as_matrix();
    let mut row = Vec::with_capacity(d);
    for t in 0..x.samples() {
        row.clear();
        row.extend((0..d).map(|i| format_number(m[(i, t)])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signal_csv(path: &Path) -> Result<(SignalMatrix, Vec<String>)> {
    let mut r = ::csv::Reader::from_path(path).map_err(csv_err)?;
    let names: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let d = names.len();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let offset = rec.position().map_or(0, |p| p.byte());
        if rec.len() != d {
            return Err(Error::Format { offset, message: format!("expected {d} fields, found {}", rec.len()) });
        }
        for f in rec.iter() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Format { offset, message: format!("not a number: '{f}'") })?;
            values.push(v);
        }
    }
    if d == 0 || values.is_empty() {
        return Err(Error::Format { offset: 0, message: "no samples".into() });
    }
    let t = values.len() / d;
    // Rows are samples, so the flat buffer is column-major for a d×T matrix.
    let m = DMatrix::from_vec(d, t, values);
    Ok((SignalMatrix::new(m)?, names))
}

fn csv_err(e: ::csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format { offset, message: format!("{other:?}") },
    }
}
