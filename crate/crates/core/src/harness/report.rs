//! Tabular results and their CSV form.

use std::fs;
use std::path::Path;

use crate::error::{invalid, Result, RisError};
use crate::units::format_sig6;

/// Named numeric columns, one row per sweep value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Report {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| invalid(format!("no column {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Header line then one line per row, six significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| format_sig6(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn emit_csv(report: &Report, path: &Path) -> Result<()> {
    fs::write(path, report.to_csv()).map_err(|source| RisError::Io { path: path.to_path_buf(), source })
}
