//! File emission. Floats are written with 17 significant digits so they
//! round-trip exactly; absent values are empty CSV fields.

use std::fs;
use std::path::{Path, PathBuf};

use grassmann_stream::harness::{SweepResult, TrialRecord};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const GRID_COLUMNS: [&str; 6] = ["n", "d", "m", "mean_ratio", "var_ratio", "fail_frac"];

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn optional(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::output(path, e))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| CliError::output(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::output(path, e))?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}

pub fn series_csv(path: &Path, records: &[TrialRecord]) -> CliResult<()> {
    let rows = records.iter().map(|r| {
        vec![
            r.t.to_string(),
            float(r.zeta),
            float(r.kappa),
            optional(r.theta),
            optional(r.norm_p),
            optional(r.norm_r_tilde),
            optional(r.norm_r),
            optional(r.delta),
            optional(r.det_lower_bound),
            r.status_label().to_string(),
        ]
    });
    write_rows(path, &TrialRecord::COLUMNS, rows)
}

pub fn grid_csv(path: &Path, result: &SweepResult) -> CliResult<()> {
    let rows = result.cells.iter().map(|c| {
        vec![
            c.n.to_string(),
            c.d.to_string(),
            c.m.to_string(),
            float(c.mean_ratio),
            float(c.var_ratio),
            float(c.fail_frac),
        ]
    });
    write_rows(path, &GRID_COLUMNS, rows)
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn json_file<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, to_json(value)?).map_err(|e| CliError::output(path, e))
}

/// Writes to stdout, treating a closed pipe as success.
pub fn emit(text: &str) -> CliResult<()> {
    use std::io::{ErrorKind, Write};
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(CliError::output("<stdout>", e)),
        _ => Ok(()),
    }
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
