//! Result tables: one row per evaluation, one cell per metric column, each
//! cell carrying mean, sample standard deviation and the number of records
//! behind it. Written as a CSV and a JSON dual.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliResult};

pub const ABSENT: &str = "ABSENT";

/// One seed (or chunk) of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seed: u64,
    pub repetition: usize,
    /// Seed actually fed to the emulator or simulator.
    pub derived_seed: u64,
    /// Aligned with the table's columns; `None` when not produced.
    pub values: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Records that produced a finite value.
    pub n: usize,
    pub absent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub cells: Vec<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    Some((mean, std))
}

fn aggregate(records: &[Record], column: usize) -> Cell {
    let values: Vec<f64> = records.iter().filter_map(|r| r.values.get(column).copied().flatten()).filter(|v| v.is_finite()).collect();
    let absent = records.is_empty() || values.len() < records.len();
    match mean_std(&values) {
        Some((mean, std)) if !absent => Cell { mean: Some(mean), std: Some(std), n: values.len(), absent },
        _ => Cell { mean: None, std: None, n: values.len(), absent: true },
    }
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn row(&self, name: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Mean of `column` in row `row`, if present.
    pub fn mean(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.column(column)?;
        self.row(row)?.cells.get(c)?.mean
    }

    pub fn push_row(&mut self, name: &str, records: Vec<Record>, error: Option<String>) {
        let cells = (0..self.columns.len()).map(|c| aggregate(&records, c)).collect();
        self.rows.push(Row { name: name.to_string(), cells, error, records });
    }

    /// True when the table has at least one row and no ABSENT cell.
    pub fn is_complete(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.error.is_none() && r.cells.iter().all(|c| !c.absent))
    }

    pub fn to_csv(&self) -> CliResult<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["name".to_string()];
        for c in &self.columns {
            header.extend([format!("{c}_mean"), format!("{c}_std"), format!("{c}_n")]);
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.name.clone()];
            for cell in &row.cells {
                match (cell.absent, cell.mean, cell.std) {
                    (false, Some(m), Some(s)) => rec.extend([m.to_string(), s.to_string()]),
                    _ => rec.extend([ABSENT.to_string(), ABSENT.to_string()]),
                }
                rec.push(cell.n.to_string());
            }
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| crate::CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> CliResult<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`; returns the paths and
/// whether the table is complete.
pub fn emit_tables(table: &Table, dir: &Path, stem: &str) -> CliResult<(Vec<PathBuf>, bool)> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&csv_path, table.to_csv()?).map_err(io_err(&csv_path))?;
    std::fs::write(&json_path, table.to_json()?).map_err(io_err(&json_path))?;
    Ok((vec![csv_path, json_path], table.is_complete()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, values: Vec<Option<f64>>) -> Record {
        Record { seed, repetition: 0, derived_seed: seed, values, extra: serde_json::Value::Null }
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), Some((7.0, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }

    #[test]
    fn missing_values_mark_cells_absent() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push_row("r", vec![rec(0, vec![Some(1.0), None]), rec(1, vec![Some(3.0), Some(2.0)])], None);
        assert_eq!(t.rows[0].cells[0], Cell { mean: Some(2.0), std: Some(2f64.sqrt()), n: 2, absent: false });
        assert!(t.rows[0].cells[1].absent);
        assert_eq!(t.rows[0].cells[1].n, 1);
        assert!(!t.is_complete());
        let csv = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "name,a_mean,a_std,a_n,b_mean,b_std,b_n");
        assert!(csv.lines().nth(1).unwrap().ends_with("ABSENT,ABSENT,1"));
    }

    #[test]
    fn empty_table_is_header_only_and_incomplete() {
        let t = Table::new("t", &["a"]);
        assert!(!t.is_complete());
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "name,a_mean,a_std,a_n\n");
    }

    #[test]
    fn non_finite_values_are_absent() {
        let mut t = Table::new("t", &["a"]);
        t.push_row("r", vec![rec(0, vec![Some(f64::NAN)])], None);
        assert!(t.rows[0].cells[0].absent);
    }

    #[test]
    fn json_round_trips() {
        let mut t = Table::new("t", &["a"]);
        t.push_row("r", vec![rec(0, vec![Some(0.1 + 0.2)])], None);
        let back: Table = serde_json::from_slice(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
