//! Small helpers for writing artifacts.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::Result;

/// Shortest round-trip decimal form; stable across runs and platforms.
pub fn fmt(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a header and rows of numbers as CSV.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt))?;
    }
    w.flush()?;
    Ok(())
}
