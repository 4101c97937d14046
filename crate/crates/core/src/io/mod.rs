//! Versioned files for models, datasets, run manifests and reports.

mod binary;
mod dataset;
mod manifest;
mod model;
mod report;

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;

pub use dataset::{load_dataset, read_dataset_csv, save_dataset, write_dataset_csv, DatasetFormat};
pub use manifest::{ArtifactEntry, RunManifest, MANIFEST_NAME};
pub use model::{load_model, load_model_file, save_model, save_model_as, ModelFile, ModelFormat, Provenance};
pub use report::{write_report, Report, ReportFormat, ReportRow, REPORT_COLUMNS};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Write `bytes` to a temporary file beside `path` and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Hash of the compact JSON form of a config value.
pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(serde_json::to_string(config).expect("json value serializes").as_bytes())
}
