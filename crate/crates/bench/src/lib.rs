//! Shared fixtures for the pipeline benchmarks.

use fids_core::dataio::partition;
use fids_core::synth::{gaussian_blobs, numbered_labels, BlobSpec};
use fids_core::{Dataset, GridSpec, RoundConfig};

/// `k` classes of `per_class` rows in four features.
pub fn blobs(k: usize, per_class: usize, seed: u64) -> Dataset {
    gaussian_blobs(&BlobSpec::balanced(k, per_class, seed), numbered_labels(k)).expect("valid blob spec")
}

/// Three stratified parts of a blob set: edge1, edge2, server.
pub fn parts(k: usize, per_class: usize, seed: u64) -> Vec<Dataset> {
    partition(&blobs(k, per_class, seed), 3, seed).expect("enough rows to partition")
}

/// A round configuration with an 8-point grid.
pub fn small_round_config(max_rounds: u32) -> RoundConfig {
    RoundConfig {
        max_rounds,
        seed: 1,
        grid: GridSpec { depths: vec![2, 3], iterations: vec![10, 20], learning_rates: vec![0.5, 1.0] },
        ..RoundConfig::default()
    }
}
