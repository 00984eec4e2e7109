//! Result serialization: one human-diffable JSON document per run plus
//! flat CSV sidecars for anything a plotting script would want.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Everything needed to reproduce a run: tool version, master seed, and the
/// digest of the exact input bytes. No timestamps, so identical runs write
/// identical bundles.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
}

impl Provenance {
    pub fn new(seed: Option<u64>) -> Self {
        Self {
            tool: "gcpairs".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            input_path: None,
            input_sha256: None,
        }
    }

    /// Attaches the input file's path and content digest.
    pub fn with_input(mut self, path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })?;
        self.input_path = Some(path.display().to_string());
        self.input_sha256 = Some(hex(&Sha256::digest(&bytes)));
        Ok(self)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The single structured document every subcommand emits.
#[derive(Debug, Serialize)]
pub struct ResultBundle<C: Serialize, R: Serialize> {
    pub command: String,
    pub config: C,
    pub provenance: Provenance,
    pub results: R,
}

impl<C: Serialize, R: Serialize> ResultBundle<C, R> {
    pub fn new(command: &str, config: C, provenance: Provenance, results: R) -> Self {
        Self { command: command.into(), config, provenance, results }
    }

    /// Writes `bundle.json` under `out` and returns its path.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.into(), source })?;
        let path = out.join("bundle.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n")
            .map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(path)
    }
}

/// Writes a plain numeric table with a header row; the plot-ready export
/// format shared by all subcommands.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|source| CliError::Io { path: dir.into(), source })?;
        }
    }
    let file =
        std::fs::File::create(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
    writer.write_record(header).map_err(|source| CliError::Csv { path: path.into(), source })?;
    for row in rows {
        writer.write_record(row).map_err(|source| CliError::Csv { path: path.into(), source })?;
    }
    writer.flush().map_err(|source| CliError::Io { path: path.into(), source })?;
    Ok(())
}
