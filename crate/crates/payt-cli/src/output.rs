//! CSV writers. Floats use the shortest round-trip encoding, and rows are
//! emitted in deterministic order, so reruns are byte-identical.

use anyhow::{Context, Result};
use std::path::Path;

pub struct CsvWriter {
    inner: csv::Writer<std::fs::File>,
    path: String,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<CsvWriter> {
        let file = std::fs::File::create(path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(header)?;
        Ok(CsvWriter { inner, path: path.display().to_string() })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.inner.write_record(fields).with_context(|| format!("writing {}", self.path))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().with_context(|| format!("flushing {}", self.path))
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_bool(v: bool) -> String {
    u8::from(v).to_string()
}
