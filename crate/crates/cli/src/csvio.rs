//! CSV ingestion and output.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use convmode::Dataset;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// A dataset read from CSV together with its provenance.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: Dataset,
    /// Names of the design columns, `(intercept)` first when added.
    pub columns: Vec<String>,
    pub response: String,
    pub intercept: bool,
    /// SHA-256 of the raw file.
    pub digest: String,
}

pub const INTERCEPT_NAME: &str = "(intercept)";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io("read", path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Reads a headed CSV and builds the design.
///
/// `covariates = None` takes every column except the response. Cells must
/// parse as finite numbers; errors name the data row (1-based, header
/// excluded), the file line and the column.
pub fn load(
    path: &Path,
    response: &str,
    covariates: Option<&[String]>,
    intercept: bool,
) -> CliResult<LoadedData> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io("read", path, e))?;
    let digest = sha256_hex(&bytes);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: cannot read header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Input(format!(
                "{}: no column named '{name}' (columns: {})",
                path.display(),
                headers.join(", ")
            ))
        })
    };
    let y_idx = find(response)?;
    let cov_idx: Vec<usize> = match covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<CliResult<_>>()?,
        None => (0..headers.len()).filter(|&i| i != y_idx).collect(),
    };
    if cov_idx.is_empty() && !intercept {
        return Err(CliError::Input("the design has no columns".into()));
    }

    let d = cov_idx.len() + usize::from(intercept);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| {
            CliError::Input(format!("{}: row {row} (line {}): {e}", path.display(), row + 1))
        })?;
        let cell = |j: usize| -> CliResult<f64> {
            let raw = record.get(j).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Input(format!(
                    "{}: row {row} (line {}), column '{}': '{raw}' is not a finite number",
                    path.display(),
                    row + 1,
                    headers[j]
                ))),
            }
        };
        if intercept {
            x.push(1.0);
        }
        for &j in &cov_idx {
            x.push(cell(j)?);
        }
        y.push(cell(y_idx)?);
    }
    let data = Dataset::from_rows(x, y, d)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut columns = Vec::with_capacity(d);
    if intercept {
        columns.push(INTERCEPT_NAME.to_string());
    }
    columns.extend(cov_idx.iter().map(|&j| headers[j].clone()));
    Ok(LoadedData {
        data,
        columns,
        response: response.to_string(),
        intercept,
        digest,
    })
}

/// Shortest representation that parses back to the same `f64`, in
/// exponent form for very small or very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Writes a CSV with the given header and rows and returns its digest.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<String> {
    let mut f = File::create(path).map_err(|e| CliError::io("create", path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io("write", path, e))?;
    Ok(sha256_hex(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-20, 123456.789, -2.5e300] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1e-20), "1e-20");
        assert_eq!(fmt_f64(2.0), "2");
    }
}
