//! The `mtxt` matrix text format.
//!
//! ```text
//! mtxt 2 3
//! 1.0000000000000000e0 -2.5000000000000000e-1 0.0000000000000000e0
//! ...
//! ```
//!
//! One header line, then one line per row with space-separated values
//! written with 17 significant digits so every `f64` round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ntk_attn_core::DenseMatrix;

use crate::error::IoError;

pub fn to_string(m: &DenseMatrix) -> String {
    let mut out = String::with_capacity(16 + m.rows() * m.cols() * 24);
    writeln!(out, "mtxt {} {}", m.rows(), m.cols()).unwrap();
    for row in m.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses `text`; `source` names the origin in error messages.
pub fn parse(text: &str, source: &Path) -> Result<DenseMatrix, IoError> {
    let err = |line: usize, msg: String| IoError::Parse { file: source.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| err(1, "missing `mtxt <rows> <cols>` header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (rows, cols) = match fields.as_slice() {
        ["mtxt", r, c] => {
            let r = r.parse::<usize>().map_err(|e| err(hline, format!("bad row count {r:?}: {e}")))?;
            let c = c.parse::<usize>().map_err(|e| err(hline, format!("bad column count {c:?}: {e}")))?;
            (r, c)
        }
        _ => return Err(err(hline, format!("expected `mtxt <rows> <cols>`, found {header:?}"))),
    };

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (lineno, line) in lines {
        if seen == rows {
            return Err(err(lineno, format!("more than the declared {rows} rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| err(lineno, format!("{tok:?} is not a number")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("{tok:?} is not finite")));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(err(lineno, format!("expected {cols} values, found {}", data.len() - before)));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(err(text.lines().count().max(1), format!("expected {rows} rows, found {seen}")));
    }
    Ok(DenseMatrix::new(rows, cols, data).expect("length checked"))
}

pub fn read(path: &Path) -> Result<DenseMatrix, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e })?;
    parse(&text, path)
}

pub fn write(path: &Path, m: &DenseMatrix) -> Result<(), IoError> {
    fs::write(path, to_string(m)).map_err(|e| IoError::Io { path: PathBuf::from(path), source: e })
}
