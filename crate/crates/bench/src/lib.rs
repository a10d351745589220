//! Shared fixtures for the criterion benches.

use desmr_core::datagen::NetworkDataset;
use desmr_core::experiments::{repetition_data, DataSpec, ExperimentConfig};
use desmr_core::netsim::Topology;

/// One synthetic Cauchy-noise draw on an Erdos-Renyi graph.
pub fn fixture(m: usize, n: usize, p: usize, seed: u64) -> (NetworkDataset, Topology) {
    let cfg = ExperimentConfig {
        seed,
        data: DataSpec {
            m,
            n,
            p,
            s: 10.min(p),
            ..DataSpec::default()
        },
        ..ExperimentConfig::default()
    };
    repetition_data(&cfg, 0).expect("fixture generation")
}
