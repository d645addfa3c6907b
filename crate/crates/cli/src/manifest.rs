use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::BenchConfig;
use crate::error::{io_err, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command and check its outputs. Contains no
/// timestamps or absolute output paths, so reruns write identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub model_format_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: BenchConfig,
    #[serde(default)]
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Whether the command met its gate and produced complete tables.
    pub complete: bool,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn relative(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

pub struct ManifestBuilder {
    pub command: String,
    pub config: BenchConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &BenchConfig) -> Self {
        let mut config = config.clone();
        config.output_dir = None;
        Self { command: command.to_string(), config, inputs: Vec::new(), outputs: Vec::new() }
    }

    /// Records an input by file name and digest; its location is not part of
    /// the manifest.
    pub fn input(&mut self, label: &str, path: &Path) -> CliResult<()> {
        self.inputs.push(FileDigest { path: label.to_string(), sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn write(self, out: &Path, complete: bool) -> CliResult<Manifest> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in &self.outputs {
            outputs.push(FileDigest { path: relative(p, out), sha256: sha256_file(p)? });
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        outputs.dedup_by(|a, b| a.path == b.path);
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            model_format_version: latact::codec::MODEL_FORMAT_VERSION,
            command: self.command,
            seed: self.config.seed,
            config: self.config,
            inputs: self.inputs,
            outputs,
            complete,
        };
        let path = out.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(manifest)
    }
}
