//! CSV input and output.
//!
//! Input files need a header row and a numeric `y` column. A leading column
//! named `t`, `date` or `timestamp` is kept as text labels; every other
//! column must be numeric and is available as an exogenous regressor.

use std::path::Path;

use dynqr::SeriesData;

use crate::error::CliError;

const LABEL_COLUMNS: [&str; 3] = ["t", "date", "timestamp"];

/// Fixed 17-significant-digit rendering so outputs are byte-stable.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_series(path: &Path) -> Result<SeriesData, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let y_col = headers.iter().position(|h| h == "y").ok_or_else(|| CliError::Csv {
        path: path.to_path_buf(),
        row: 1,
        column: "y".into(),
        message: "header has no `y` column".into(),
    })?;
    let label_col = headers
        .first()
        .filter(|h| LABEL_COLUMNS.contains(&h.as_str()))
        .map(|_| 0);
    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let record = record.map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(CliError::Csv {
                path: path.to_path_buf(),
                row,
                column: String::new(),
                message: format!("{} fields, header has {}", record.len(), headers.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            if Some(c) == label_col {
                labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().map_err(|_| CliError::Csv {
                path: path.to_path_buf(),
                row,
                column: headers[c].clone(),
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(CliError::Csv {
                    path: path.to_path_buf(),
                    row,
                    column: headers[c].clone(),
                    message: "value is not finite".into(),
                });
            }
            numeric[c].push(v);
        }
    }
    let y = std::mem::take(&mut numeric[y_col]);
    let exog: Vec<(String, Vec<f64>)> = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y_col && Some(c) != label_col)
        .map(|(c, h)| (h.clone(), std::mem::take(&mut numeric[c])))
        .collect();
    let data = SeriesData::with_exog(y, exog)?;
    match label_col {
        Some(_) => Ok(data.with_timestamps(labels)?),
        None => Ok(data),
    }
}

/// Write a header and rows of pre-rendered fields.
pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    writer.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        writer.write_record(row).map_err(|e| CliError::io(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

/// Write `data` with a leading `t` column (labels when present, else 0-based
/// index), then `y`, then the exogenous columns.
pub fn write_series(path: &Path, data: &SeriesData) -> Result<(), CliError> {
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend(data.exog_names().iter().cloned());
    let columns: Vec<&[f64]> = data
        .exog_names()
        .iter()
        .map(|n| data.exog_column(n).expect("named column"))
        .collect();
    let rows: Vec<Vec<String>> = (0..data.len())
        .map(|t| {
            let mut row = vec![match data.timestamps() {
                Some(ts) => ts[t].clone(),
                None => t.to_string(),
            }];
            row.push(fmt_num(data.y()[t]));
            row.extend(columns.iter().map(|c| fmt_num(c[t])));
            row
        })
        .collect();
    write_rows(path, &header, &rows)
}

/// Column label for a quantile level, e.g. `q0.1`.
pub fn level_label(tau: f64) -> String {
    format!("q{tau}")
}
