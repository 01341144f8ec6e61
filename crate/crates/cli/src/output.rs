//! Output files. Every file starts with a `#` header line naming the command
//! and the SHA-256 of the canonical config.

use crate::error::{CliError, Result};
use meroput::PricingConfig;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const OUT_DIR_ENV: &str = "MEROPUT_OUT_DIR";

/// Hash of the canonical config. Worker count and output directory do not
/// change results, so they are left out.
pub fn config_hash(cfg: &PricingConfig) -> String {
    let mut canon = cfg.clone();
    canon.workers = 0;
    canon.output_dir = None;
    let digest = Sha256::digest(canon.serialize().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn resolve_out_dir(cfg: &PricingConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("meroput-out"))
}

/// 17 significant digits, enough to round-trip any f64.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Writer {
    dir: PathBuf,
    header: String,
}

impl Writer {
    pub fn new(dir: &Path, command: &str, cfg: &PricingConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            header: format!("# meroput {command} config_sha256={}\n", config_hash(cfg)),
        })
    }

    pub fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut text = self.header.clone();
        text.push_str(body);
        std::fs::write(&path, text).map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(path)
    }

    pub fn csv(&self, name: &str, columns: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<PathBuf> {
        let mut body = columns.join(",");
        body.push('\n');
        for row in rows {
            let cells: Vec<String> = row.into_iter().map(num).collect();
            let _ = writeln!(body, "{}", cells.join(","));
        }
        self.write(name, &body)
    }
}

/// `points` evenly spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}
