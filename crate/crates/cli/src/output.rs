use std::fs;
use std::io::Write;

use serde::Serialize;

use crate::{CliError, Format, OutputArgs};

/// Header plus rows for the CSV rendering of a report.
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

fn render_csv(table: &Table) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(&table.header).map_err(io)?;
    for row in &table.rows {
        w.write_record(row).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Writes `json` or `table` (per `--format`) to `--out` or stdout.
pub fn emit<T: Serialize>(out: &OutputArgs, json: &T, table: impl FnOnce() -> Table) -> Result<(), CliError> {
    let bytes = match out.format {
        Format::Json => {
            let mut s = serde_json::to_vec_pretty(json).map_err(|e| CliError::Io(e.to_string()))?;
            s.push(b'\n');
            s
        }
        Format::Csv => render_csv(&table())?,
    };
    match &out.out {
        Some(path) => fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

/// Shortest round-trip representation, so CSV numbers are bit-faithful.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
