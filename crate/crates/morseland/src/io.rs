//! Report serialization: canonical JSON and CSV matrices.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::round_sig;

/// Significant digits kept in every emitted float.
pub const REPORT_DIGITS: i32 = 12;

/// Rounds every number in `v` to `REPORT_DIGITS` significant digits.
pub fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(_), _, _) | (_, Some(_), _) => Value::Number(n),
            (_, _, Some(f)) => serde_json::Number::from_f64(round_sig(f, REPORT_DIGITS)).map_or(Value::Null, Value::Number),
            _ => Value::Number(n),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and rounded floats; byte-identical for
/// equal inputs.
pub fn to_report_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Numeric(format!("serialization: {e}")))?;
    let mut s = serde_json::to_string_pretty(&canonicalize(v)).map_err(|e| Error::Numeric(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Reads a headerless CSV of numbers into a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Input(format!("csv: {e}")))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::Input(format!("csv: '{f}' is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if !row.is_empty() {
            rows.push(row);
        }
    }
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Input("csv matrix must be non-empty and rectangular".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| round_sig(m[(i, j)], REPORT_DIGITS).to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_sorts_and_rounds() {
        let v = serde_json::json!({"b": 1.0 / 3.0, "a": [2, 0.1 + 0.2]});
        let s = to_report_json(&v).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("0.333333333333"));
        assert!(s.contains("0.3\n") || s.contains("0.3,") || s.contains("0.3\r"));
    }

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 2.25, 0.0, 3.0, -1e-3]);
        assert_eq!(parse_matrix_csv(&matrix_to_csv(&m)).unwrap(), m);
        assert!(parse_matrix_csv("1,2\n3\n").is_err());
        assert!(parse_matrix_csv("1,x\n").is_err());
    }
}
