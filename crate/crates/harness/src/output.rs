//! Artifact writers: images with raw float sidecars, CSV tables and JSON reports.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::ArrayView1;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output directory of one experiment; created on first use.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// `<stem>.png` (8-bit, clamped to [0, 1]) and `<stem>.f64` (row-major
    /// little-endian float64).
    pub fn image(&self, stem: &str, pixels: ArrayView1<f64>, height: usize, width: usize) -> Result<()> {
        speckle_core::sensing::save_image(self.path(&format!("{stem}.png")), pixels, height, width)?;
        write_raw(&self.path(&format!("{stem}.f64")), pixels)
    }

    /// CSV with a header row; every record must have as many fields.
    pub fn csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `report.json` with the configuration echo, version and results.
    pub fn report(&self, config: &ExperimentConfig, results: Value) -> Result<()> {
        let doc = report_document(config, results)?;
        let mut w = BufWriter::new(File::create(self.path("report.json"))?);
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        Ok(())
    }
}

pub fn report_document(config: &ExperimentConfig, results: Value) -> Result<Value> {
    Ok(json!({
        "version": VERSION,
        "rng": "ChaCha20, one stream per look; seeds derived by hashing (seed, path)",
        "config": serde_json::to_value(config)?,
        "results": results,
    }))
}

pub fn write_raw(path: &Path, pixels: ArrayView1<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in pixels.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(crate::error::config_err(format!(
            "{} is not a float64 file ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Median of a non-empty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}
