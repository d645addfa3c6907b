//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use latact::codec::{TrainHyper, VaeConfig, VaeModel};
use latact::synth::build_chunk_set;
use latact::{ActionChunk, ActionProfile, TaskKind, TaskSpec};

pub fn specs(n: u64) -> Vec<TaskSpec> {
    (0..n).flat_map(|s| TaskKind::ALL.map(|k| TaskSpec::new(k, 8.0, 100 + s))).collect()
}

/// `n` reference-size chunks drawn from the synthetic corpus.
pub fn chunks(n: usize) -> Vec<ActionChunk> {
    build_chunk_set(&specs(4), 48, 4, Some(n)).expect("corpus large enough")
}

/// Freshly initialized reference codec.
pub fn untrained_model() -> VaeModel {
    VaeModel::new(VaeConfig::default(), Arc::new(ActionProfile::default())).expect("default config is valid")
}

/// Reference codec after a short training run, for benchmarks whose cost
/// depends on realistic weights.
pub fn briefly_trained_model() -> VaeModel {
    let hyper = TrainHyper { epochs: 3, ..TrainHyper::default() };
    latact::codec::train(&VaeConfig::default(), &chunks(256), &hyper).expect("training succeeds")
}
