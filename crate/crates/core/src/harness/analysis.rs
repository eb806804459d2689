use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::HarnessError;
use crate::mis::pearson_corr;

pub const ANALYSIS_HEADER: [&str; 6] = ["csv", "x", "y", "filter", "n", "r"];

/// Keeps only rows whose `column` equals `value` as text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowFilter {
    pub column: String,
    pub value: String,
}

impl FromStr for RowFilter {
    type Err = HarnessError;

    /// Parses `column=value`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (column, value) = s
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("filter {s:?} is not of the form column=value")))?;
        Ok(Self { column: column.to_string(), value: value.to_string() })
    }
}

impl std::fmt::Display for RowFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}={}", self.column, self.value)
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, HarnessError> {
    headers.iter().position(|h| h == name).ok_or_else(|| HarnessError::MissingColumn {
        missing: name.to_string(),
        available: headers.iter().map(str::to_string).collect(),
    })
}

/// Reads the named columns as numbers. Rows where any of them is empty,
/// or which the filter rejects, are skipped; any other unparsable value
/// is an error. `text_columns` are returned verbatim alongside.
pub fn read_numeric_columns(
    path: &Path,
    columns: &[&str],
    text_columns: &[&str],
    filter: Option<&RowFilter>,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<String>>), HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx: Vec<usize> = columns.iter().map(|c| column_index(&headers, c)).collect::<Result<_, _>>()?;
    let text_idx: Vec<usize> = text_columns.iter().map(|c| column_index(&headers, c)).collect::<Result<_, _>>()?;
    let filter_idx = filter.map(|f| column_index(&headers, &f.column)).transpose()?;
    let mut numbers = Vec::new();
    let mut texts = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if let (Some(f), Some(i)) = (filter, filter_idx) {
            if record.get(i) != Some(f.value.as_str()) {
                continue;
            }
        }
        let raw: Vec<&str> = idx.iter().map(|&i| record.get(i).unwrap_or("").trim()).collect();
        if raw.iter().any(|v| v.is_empty()) {
            continue;
        }
        let mut values = Vec::with_capacity(raw.len());
        for (v, c) in raw.iter().zip(columns) {
            values.push(v.parse::<f64>().map_err(|_| HarnessError::NotNumeric {
                column: c.to_string(),
                row: row + 1,
                value: v.to_string(),
            })?);
        }
        numbers.push(values);
        texts.push(text_idx.iter().map(|&i| record.get(i).unwrap_or("").to_string()).collect());
    }
    Ok((numbers, texts))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    pub n: usize,
    pub r: f64,
}

/// Pearson correlation of two columns of `csv_path`, appended as one row
/// to `analysis_path` (default: `analysis.csv` next to the input).
pub fn correlate(
    csv_path: &Path,
    x: &str,
    y: &str,
    filter: Option<&RowFilter>,
    analysis_path: Option<&Path>,
) -> Result<Correlation, HarnessError> {
    let (rows, _) = read_numeric_columns(csv_path, &[x, y], &[], filter)?;
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let r = pearson_corr(&xs, &ys)?;
    let result = Correlation { n: xs.len(), r };

    let out: PathBuf = match analysis_path {
        Some(p) => p.to_path_buf(),
        None => csv_path.parent().unwrap_or(Path::new(".")).join("analysis.csv"),
    };
    let fresh = std::fs::metadata(&out).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(&out).map_err(|e| HarnessError::io(&out, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(ANALYSIS_HEADER)?;
    }
    let filter_text = filter.map(|f| f.to_string()).unwrap_or_default();
    w.write_record([
        csv_path.display().to_string(),
        x.to_string(),
        y.to_string(),
        filter_text,
        result.n.to_string(),
        result.r.to_string(),
    ])?;
    w.flush().map_err(|e| HarnessError::io(&out, e))?;
    Ok(result)
}
