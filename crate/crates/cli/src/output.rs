//! Artifact writing: checksums, manifests and PGM heatmaps.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use scalelab::experiment::GridRow;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::DatasetFile;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// Writes `bytes` and returns the checksum entry for the manifest.
pub fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<Artifact> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(Artifact {
        file: name.to_string(),
        sha256: sha256_bytes(bytes),
    })
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).context("cannot serialize to TOML")
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

/// Seconds since the epoch; `SOURCE_DATE_EPOCH` pins it for reproducible output.
pub fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub timestamp_unix: u64,
    pub config: &'a C,
    pub dataset_files: &'a [DatasetFile],
    pub artifacts: Vec<Artifact>,
}

impl<C: Serialize> Manifest<'_, C> {
    pub fn write(&self) -> Result<()> {
        let path = self.output_dir.join("manifest.toml");
        std::fs::write(&path, to_toml(self)?).with_context(|| format!("cannot write {}", path.display()))
    }
}

pub const DIVERGED_SHADE: u8 = 255;

/// Shade of a metric value in `[0, 1]`; 255 is reserved for diverged cells.
pub fn shade(value: f64, diverged: bool) -> u8 {
    if diverged {
        DIVERGED_SHADE
    } else {
        (value.clamp(0.0, 1.0) * 254.0).round() as u8
    }
}

pub const SHADE_MAPPING: &str = "shade = round(value * 254) for value in [0, 1]; 255 marks diverged cells; \
one pixel per cell, columns ascending in log10_alpha, rows descending in log10_eta (largest eta on top)";

/// Binary PGM (P5) with one pixel per cell.
pub fn heatmap(rows: &[GridRow], etas: &[f64], alphas: &[f64], metric: impl Fn(&GridRow) -> f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", alphas.len(), etas.len()).into_bytes();
    let mut eta_order: Vec<usize> = (0..etas.len()).collect();
    eta_order.sort_by(|&a, &b| etas[b].total_cmp(&etas[a]));
    let mut alpha_order: Vec<usize> = (0..alphas.len()).collect();
    alpha_order.sort_by(|&a, &b| alphas[a].total_cmp(&alphas[b]));
    for &i in &eta_order {
        for &j in &alpha_order {
            let r = &rows[i * alphas.len() + j];
            out.push(shade(metric(r), r.diverged));
        }
    }
    out
}
