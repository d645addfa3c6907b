use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{chunk_dataset, generate_trajectory, TaskSpec};
use crate::csvio;
use crate::error::{arg_err, Result};
use crate::types::ActionChunk;

pub const CORPUS_MANIFEST_FILE: &str = "corpus.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub spec: TaskSpec,
    /// Relative to the corpus directory.
    pub path: String,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub control_frequency_hz: f64,
    pub channels: Vec<String>,
    pub entries: Vec<CorpusEntry>,
}

/// Writes one CSV per task spec plus [`CORPUS_MANIFEST_FILE`] into `dir`.
pub fn export_corpus(specs: &[TaskSpec], dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(specs.len());
    let mut header = None;
    for (i, spec) in specs.iter().enumerate() {
        let traj = generate_trajectory(spec)?;
        let name = format!("{:03}_{}_seed{}.csv", i, spec.kind.name(), spec.seed);
        csvio::save_trajectory(dir.join(&name), &traj)?;
        header.get_or_insert_with(|| (traj.profile().control_frequency_hz(), traj.profile().channel_names().to_vec()));
        entries.push(CorpusEntry { spec: spec.clone(), path: name, samples: traj.len() });
    }
    let (hz, channels) = header.unwrap_or((60.0, Vec::new()));
    let manifest = CorpusManifest { control_frequency_hz: hz, channels, entries };
    std::fs::write(dir.join(CORPUS_MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Chunks every task with the given stride; when `count` is set, keeps
/// exactly that many chunks spread evenly over the pooled list.
pub fn build_chunk_set(specs: &[TaskSpec], horizon: usize, stride: usize, count: Option<usize>) -> Result<Vec<ActionChunk>> {
    let mut pool = Vec::new();
    for spec in specs {
        pool.extend(chunk_dataset(&generate_trajectory(spec)?, horizon, stride)?);
    }
    match count {
        None => Ok(pool),
        Some(n) if n > pool.len() => arg_err(format!("corpus yields {} chunks, {n} requested", pool.len())),
        Some(n) => Ok((0..n).map(|i| pool[i * pool.len() / n].clone()).collect()),
    }
}
