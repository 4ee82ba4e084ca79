//! Writing bundles to disk.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::protocols::Bundle;

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `episodes.csv`, `aggregate.csv`, `bounds.csv` (sweeps only),
/// `metadata.json`, `checkpoints/` and `logs/` under `dir`.
pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if bundle.config.protocol.is_bound_sweep() {
        write_csv(&dir.join("bounds.csv"), &bundle.bounds)?;
    } else {
        write_csv(&dir.join("episodes.csv"), &bundle.episodes)?;
        write_csv(&dir.join("aggregate.csv"), &bundle.aggregates)?;
    }
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&bundle.metadata)? + "\n")?;
    for (sub, files) in [("checkpoints", &bundle.checkpoints), ("logs", &bundle.logs)] {
        if files.is_empty() {
            continue;
        }
        let d = dir.join(sub);
        fs::create_dir_all(&d)?;
        for (name, body) in files {
            fs::write(d.join(name), body)?;
        }
    }
    Ok(())
}
