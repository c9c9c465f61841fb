//! Writers for report files.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use crate::histogram::Bucket;
use crate::Failure;

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::Runtime)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let write = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    };
    write()
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)
}

/// As [`write_csv`], but always writes `header` so an empty table still has one.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), Failure> {
    let write = || -> anyhow::Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        w.write_record(header)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    };
    write()
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let write = || -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    };
    write()
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)
}

pub fn write_histogram(path: &Path, buckets: &[Bucket]) -> Result<(), Failure> {
    write_csv_with_header(path, &["lo", "hi", "count"], buckets)
}
