//! File formats, run configuration and command drivers for the `pfrac`
//! phase-field fracture solver. The numerics live in `pfrac-core`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod msh;
pub mod tables;
pub mod vtu;

pub use pfrac_core as core;

/// I/O failure on a named file.
#[derive(Debug, Error)]
#[error("{}: {source}", path.display())]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

impl OutputError {
    pub fn new(path: &Path, source: std::io::Error) -> Self {
        Self {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>, OutputError> {
    File::create(path).map(BufWriter::new).map_err(|e| OutputError::new(path, e))
}

/// Scientific notation with 17 significant digits, enough to round-trip
/// any `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
