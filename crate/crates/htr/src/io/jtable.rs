//! CSV JTables: one row per video, one comma-separated Jaccard value per
//! frame. Rows may have different lengths; blank cells are forbidden.

use crate::error::{Error, Result};
use crate::metrics::JTable;
use std::fs;
use std::path::Path;

pub fn parse(text: &str) -> Result<JTable> {
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col_no, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::Malformed(format!(
                    "blank cell at line {}, column {}",
                    line_no + 1,
                    col_no + 1
                )));
            }
            let value: f64 = cell.parse().map_err(|_| {
                Error::Malformed(format!(
                    "unparsable value {:?} at line {}, column {}",
                    cell,
                    line_no + 1,
                    col_no + 1
                ))
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    JTable::new(rows)
}

pub fn read(path: &Path) -> Result<JTable> {
    parse(&fs::read_to_string(path)?)
}
