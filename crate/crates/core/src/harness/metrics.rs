use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub metric: String,
    pub value: f64,
    pub units: String,
    pub seed: u64,
}

/// Append-only metrics file; every row is flushed as soon as it is added
/// so a failed run leaves the rows written so far.
pub struct MetricsSink {
    run_id: String,
    seed: u64,
    writer: csv::Writer<BufWriter<File>>,
    rows: Vec<MetricsRow>,
}

impl MetricsSink {
    pub fn create(path: &Path, run_id: &str, seed: u64) -> Result<Self> {
        let writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        Ok(MetricsSink {
            run_id: run_id.to_string(),
            seed,
            writer,
            rows: Vec::new(),
        })
    }

    pub fn add(&mut self, metric: impl Into<String>, value: f64, units: &str) -> Result<()> {
        let row = MetricsRow {
            run_id: self.run_id.clone(),
            metric: metric.into(),
            value,
            units: units.to_string(),
            seed: self.seed,
        };
        self.writer.serialize(&row)?;
        self.writer.flush()?;
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn finish(mut self) -> Result<Vec<MetricsRow>> {
        self.writer.flush()?;
        Ok(std::mem::take(&mut self.rows))
    }
}

impl Drop for MetricsSink {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

/// Writes serializable rows as CSV, header included.
pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
