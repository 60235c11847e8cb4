use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Writes a CSV file with a header row.
pub fn write_csv<R>(path: &Path, header: &[String], rows: R) -> Result<()>
where
    R: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// The output directory, created on demand.
pub fn out_dir(dir: &Option<PathBuf>) -> Result<Option<&Path>> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
            Ok(Some(d.as_path()))
        }
        None => Ok(None),
    }
}

pub fn headers(prefix: &str, q: usize) -> Vec<String> {
    (1..=q).map(|i| format!("{prefix}{i}")).collect()
}

pub fn num(v: f64) -> String {
    format!("{v}")
}
