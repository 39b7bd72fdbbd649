//! CSV output and a small numeric reader for the plot command.
//!
//! Dialect: comma separator, `.` decimal point, LF line endings, one header
//! row, `#` comment lines before the header carrying the artifact version
//! and the resolved seed.

use crate::error::{Error, Result};
use std::io::Write;

pub fn write_csv<W: Write>(
    w: &mut W,
    version: &str,
    seed: u64,
    header: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    writeln!(w, "# rfs-version: {version}")?;
    writeln!(w, "# seed: {seed}")?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parsed numeric CSV: header names and per-column values. Empty cells
/// parse as NaN so column lengths stay aligned.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvData {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }
}

pub fn read_numeric_csv(text: &str) -> Result<CsvData> {
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let header_line = lines.next().ok_or_else(|| Error::Io("empty csv".into()))?;
    let header: Vec<String> = header_line.split(',').map(|h| h.trim().to_string()).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for (rowno, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Io(format!(
                "csv row {} has {} cells, expected {}",
                rowno + 2,
                cells.len(),
                header.len()
            )));
        }
        for (c, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            let value = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| {
                    Error::Io(format!("csv cell `{cell}` in row {} is not numeric", rowno + 2))
                })?
            };
            columns[c].push(value);
        }
    }
    Ok(CsvData { header, columns })
}
