//! Plain-text formats shared by every CLI entry point: matrices as CSV with
//! one matrix row per line, vectors as one real per line. Values are written
//! with Rust's shortest round-trip formatting, so write → read is exact.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::fmt::Write as _;
use std::path::Path;

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_vector(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    std::fs::write(path, format_vector(v))?;
    Ok(())
}

fn parse_matrix(text: &str) -> std::result::Result<DMatrix<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, String> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("line {}: bad number {tok:?}", lineno + 1))
            })
            .collect();
        let row = row?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("no rows".into());
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

fn parse_vector(text: &str) -> std::result::Result<DVector<f64>, String> {
    let mut vals = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        vals.push(
            t.parse::<f64>()
                .map_err(|_| format!("line {}: bad number {t:?}", lineno + 1))?,
        );
    }
    if vals.is_empty() {
        return Err("no entries".into());
    }
    Ok(DVector::from_vec(vals))
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

fn format_vector(v: &DVector<f64>) -> String {
    let mut out = String::new();
    for x in v.iter() {
        let _ = writeln!(out, "{x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trips_exactly() {
        let m = DMatrix::from_row_slice(
            2,
            3,
            &[0.1, 1.0 / 3.0, -2.5e-300, 1e300, -0.0, 7.000000000000001],
        );
        let text = format_matrix(&m);
        let back = parse_matrix(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn vector_round_trips_exactly() {
        let v = DVector::from_vec(vec![0.1, -1.0 / 3.0, 4.9e-324, f64::MAX]);
        let back = parse_vector(&format_vector(&v)).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn parse_accepts_whitespace_and_blank_lines() {
        let m = parse_matrix("1, 2 ,3\n\n4,5,6\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let v = parse_vector(" 1.5 \n\n-2\n").unwrap();
        assert_eq!(v, DVector::from_vec(vec![1.5, -2.0]));
    }

    #[test]
    fn parse_rejects_malformed_input() {
        assert!(parse_matrix("1,2\n3\n").is_err()); // ragged
        assert!(parse_matrix("1,abc\n").is_err());
        assert!(parse_matrix("").is_err());
        assert!(parse_vector("x\n").is_err());
        assert!(parse_vector("\n \n").is_err());
        assert!(parse_vector("1,2\n").is_err()); // vectors are one per line
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("a.csv");
        let vp = dir.path().join("y.txt");
        let m = DMatrix::from_row_slice(2, 2, &[1.25, -3.5, 0.0, 9.75]);
        let v = DVector::from_vec(vec![1.0, -0.125]);
        write_matrix_csv(&mp, &m).unwrap();
        write_vector(&vp, &v).unwrap();
        assert_eq!(read_matrix_csv(&mp).unwrap(), m);
        assert_eq!(read_vector(&vp).unwrap(), v);
        let missing = read_matrix_csv(&dir.path().join("nope.csv"));
        assert!(missing.is_err());
    }
}
