//! Shared fixtures for the benchmarks.

use ssem_core::sampling::sample_dataset;
use ssem_core::{Dataset, MixtureParams, ModelKind, SampleConfig};

pub fn three_component_truth() -> MixtureParams {
    MixtureParams::new(vec![0.2, 0.5, 0.3], vec![-2.0, 0.0, 2.0]).expect("valid parameters")
}

/// A dataset of `total` observations, 10% labeled.
pub fn dataset(kind: &ModelKind, truth: &MixtureParams, total: usize) -> Dataset {
    let m = total / 10;
    let cfg = SampleConfig {
        seed: 1,
        m,
        n: total - m,
        allocation: Default::default(),
    };
    sample_dataset(kind, truth, &cfg).expect("sampling succeeds")
}
