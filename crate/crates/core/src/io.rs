//! Matrix Market and CSV helpers shared by the pipeline stages.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Serialises a dense matrix in Matrix Market coordinate format (nonzeros only).
pub fn write_matrix_market(m: &DMatrix<f64>) -> String {
    let mut entries = Vec::new();
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if v != 0.0 {
                entries.push((r, c, v));
            }
        }
    }
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", m.nrows(), m.ncols(), entries.len());
    for (r, c, v) in entries {
        let _ = writeln!(out, "{} {} {:e}", r + 1, c + 1, v);
    }
    out
}

/// Reads coordinate or array Matrix Market files with `general` or `symmetric` symmetry.
pub fn read_matrix_market(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate();
    let (_, banner) = lines.next().ok_or(Error::Parse { line: 1, message: "empty Matrix Market file".into() })?;
    let banner_lc = banner.to_ascii_lowercase();
    let tokens: Vec<&str> = banner_lc.split_whitespace().collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(Error::Parse { line: 1, message: format!("bad banner {banner:?}") });
    }
    let coordinate = match tokens[2] {
        "coordinate" => true,
        "array" => false,
        other => return Err(Error::Parse { line: 1, message: format!("unsupported format {other}") }),
    };
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(Error::Parse { line: 1, message: format!("unsupported field {}", tokens[3]) });
    }
    let symmetric = match tokens[4] {
        "general" => false,
        "symmetric" => true,
        other => return Err(Error::Parse { line: 1, message: format!("unsupported symmetry {other}") }),
    };

    let mut body = lines.filter(|(_, l)| !l.trim_start().starts_with('%') && !l.trim().is_empty());
    let (size_idx, size_line) = body.next().ok_or(Error::Parse { line: 2, message: "missing size line".into() })?;
    let parse_usize = |s: &str, line: usize| -> Result<usize> {
        s.parse().map_err(|_| Error::Parse { line: line + 1, message: format!("expected integer, found {s:?}") })
    };
    let parse_f64 = |s: &str, line: usize| -> Result<f64> {
        s.parse().map_err(|_| Error::Parse { line: line + 1, message: format!("expected number, found {s:?}") })
    };
    let size: Vec<&str> = size_line.split_whitespace().collect();
    let rows = parse_usize(size.first().copied().unwrap_or(""), size_idx)?;
    let cols = parse_usize(size.get(1).copied().unwrap_or(""), size_idx)?;
    let mut m = DMatrix::zeros(rows, cols);

    if coordinate {
        let nnz = parse_usize(size.get(2).copied().unwrap_or(""), size_idx)?;
        let mut seen = 0;
        for (idx, line) in body {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() < 3 {
                return Err(Error::Parse { line: idx + 1, message: "expected `row col value`".into() });
            }
            let r = parse_usize(t[0], idx)?;
            let c = parse_usize(t[1], idx)?;
            if r == 0 || c == 0 || r > rows || c > cols {
                return Err(Error::Parse { line: idx + 1, message: format!("index ({r}, {c}) out of range") });
            }
            let v = parse_f64(t[2], idx)?;
            m[(r - 1, c - 1)] = v;
            if symmetric {
                m[(c - 1, r - 1)] = v;
            }
            seen += 1;
        }
        if seen != nnz {
            return Err(Error::Parse { line: size_idx + 1, message: format!("declared {nnz} entries, found {seen}") });
        }
    } else {
        let values: Vec<(usize, &str)> = body.map(|(i, l)| (i, l.trim())).collect();
        let mut it = values.into_iter();
        for c in 0..cols {
            let start = if symmetric { c } else { 0 };
            for r in start..rows {
                let (idx, tok) = it.next().ok_or(Error::Parse { line: size_idx + 1, message: "array data truncated".into() })?;
                let v = parse_f64(tok, idx)?;
                m[(r, c)] = v;
                if symmetric {
                    m[(c, r)] = v;
                }
            }
        }
    }
    Ok(m)
}

/// `index,re,im` rows for a complex amplitude vector.
pub fn complex_vector_csv(values: &[Complex64]) -> String {
    let mut out = String::from("index,re,im\n");
    for (i, z) in values.iter().enumerate() {
        let _ = writeln!(out, "{i},{:e},{:e}", z.re, z.im);
    }
    out
}

/// Dense real matrix as `row,col,value`.
pub fn real_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::from("row,col,value\n");
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let _ = writeln!(out, "{r},{c},{:e}", m[(r, c)]);
        }
    }
    out
}

/// Dense complex matrix as `row,col,re,im`.
pub fn complex_matrix_csv(m: &DMatrix<Complex64>) -> String {
    let mut out = String::from("row,col,re,im\n");
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let z = m[(r, c)];
            let _ = writeln!(out, "{r},{c},{:e},{:e}", z.re, z.im);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -2.5, 0.0, 3.25, 0.0]);
        assert_eq!(read_matrix_market(&write_matrix_market(&m)).unwrap(), m);
    }

    #[test]
    fn symmetric_coordinate_and_array() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% c\n2 2 2\n1 1 2\n2 1 -1\n";
        let m = read_matrix_market(text).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 0.0]));
        let arr = "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n";
        assert_eq!(read_matrix_market(arr).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
    }

    #[test]
    fn malformed_inputs() {
        assert!(read_matrix_market("").is_err());
        assert!(read_matrix_market("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n").is_err());
        assert!(read_matrix_market("%%MatrixMarket matrix coordinate real general\n1 1 2\n1 1 1\n").is_err());
        assert!(read_matrix_market("%%MatrixMarket matrix coordinate real general\n1 1 1\n2 1 1\n").is_err());
    }
}
