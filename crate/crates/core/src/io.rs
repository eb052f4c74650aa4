//! Dense matrix input/output: header-free CSV and MatrixMarket `array` files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn parse_err(location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        location,
        message: message.into(),
    }
}

fn parse_f64(s: &str, location: impl FnOnce() -> String) -> Result<f64> {
    let t = s.trim();
    t.parse::<f64>()
        .map_err(|e| parse_err(location(), format!("`{t}`: {e}")))
}

/// Reads comma-separated rows; every row must have the same length.
pub fn read_csv_matrix<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_err(
                    format!("row {}", r + 1),
                    format!("expected {c} fields, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for (c, field) in record.iter().enumerate() {
            data.push(parse_f64(field, || {
                format!("row {}, column {}", r + 1, c + 1)
            })?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err("input".into(), "no data rows"))?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_csv_matrix<W: Write>(writer: W, a: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    for row in a.row_iter() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a dense MatrixMarket file (`%%MatrixMarket matrix array real general`).
pub fn read_matrix_market<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err("line 1".into(), "empty file"))?;
    let header = header?;
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(
            "line 1".into(),
            "missing %%MatrixMarket matrix header",
        ));
    }
    if tokens[2] != "array" {
        return Err(parse_err(
            "line 1".into(),
            format!("unsupported format `{}`", tokens[2]),
        ));
    }
    if tokens[3] != "real" && tokens[3] != "integer" && tokens[3] != "double" {
        return Err(parse_err(
            "line 1".into(),
            format!("unsupported field `{}`", tokens[3]),
        ));
    }
    if tokens[4] != "general" {
        return Err(parse_err(
            "line 1".into(),
            format!("unsupported symmetry `{}`", tokens[4]),
        ));
    }
    let mut shape = None;
    let mut data = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let loc = || format!("line {}", i + 1);
        if shape.is_none() {
            let dims: Vec<&str> = t.split_whitespace().collect();
            if dims.len() != 2 {
                return Err(parse_err(loc(), "expected `rows cols`"));
            }
            let parse_dim = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| parse_err(loc(), format!("bad dimension `{s}`: {e}")))
            };
            shape = Some((parse_dim(dims[0])?, parse_dim(dims[1])?));
            continue;
        }
        for tok in t.split_whitespace() {
            data.push(parse_f64(tok, loc)?);
        }
    }
    let (m, n) = shape.ok_or_else(|| parse_err("header".into(), "missing size line"))?;
    if data.len() != m * n {
        return Err(parse_err(
            "body".into(),
            format!("expected {} values, found {}", m * n, data.len()),
        ));
    }
    Ok(DMatrix::from_column_slice(m, n, &data))
}

pub fn write_matrix_market<W: Write>(writer: W, a: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} {}", a.nrows(), a.ncols())?;
    for v in a.iter() {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn is_matrix_market(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mtx") || e.eq_ignore_ascii_case("mm"))
}

/// Reads a matrix, choosing MatrixMarket for `.mtx`/`.mm` and CSV otherwise.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let f = File::open(path)?;
    if is_matrix_market(path) {
        read_matrix_market(f)
    } else {
        read_csv_matrix(f)
    }
}

pub fn write_matrix(path: &Path, a: &DMatrix<f64>) -> Result<()> {
    let f = File::create(path)?;
    if is_matrix_market(path) {
        write_matrix_market(f, a)
    } else {
        write_csv_matrix(f, a)
    }
}

/// Reads right-hand sides: a single row is treated as one column vector.
pub fn read_rhs(path: &Path) -> Result<DMatrix<f64>> {
    let b = read_matrix(path)?;
    Ok(if b.nrows() == 1 { b.transpose() } else { b })
}

/// Reads a single vector stored as one row or one column.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let b = read_rhs(path)?;
    if b.ncols() != 1 {
        return Err(parse_err(
            path.display().to_string(),
            format!("expected a vector, found {}x{}", b.nrows(), b.ncols()),
        ));
    }
    Ok(b.column(0).clone_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[0.1, -2.5e-300, 3.0, 1.0 / 3.0, 7.0, -0.0]);
        let mut buf = Vec::new();
        write_csv_matrix(&mut buf, &a).unwrap();
        assert_eq!(read_csv_matrix(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn matrix_market_round_trip_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0 / 7.0, 2.0, -3.5, 1e-17]);
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, &a).unwrap();
        assert_eq!(read_matrix_market(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn ragged_csv_is_rejected_with_location() {
        let err = read_csv_matrix("1,2\n3\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn matrix_market_with_comments() {
        let text = "%%MatrixMarket matrix array real general\n% note\n2 1\n1.5\n-2\n";
        let a = read_matrix_market(text.as_bytes()).unwrap();
        assert_eq!(a, DMatrix::from_column_slice(2, 1, &[1.5, -2.0]));
        let bad = "%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 2\n";
        assert!(read_matrix_market(bad.as_bytes()).is_err());
    }
}
