#![allow(dead_code)]

pub mod audit;
pub mod gradcase;

use std::path::PathBuf;

use trire::data::{synthetic_blobs, TaskStream};
use trire::masks::{NeuronMask, SubnetworkMask};
use trire::model::Layout;
use trire::numeric::Rng;
use trire::trainer::{EpochSplit, TriREConfig};

/// Neuron-consistent mask: each neuron kept with probability `p_neuron`,
/// each parameter of a kept neuron with probability `p_weight`.
pub fn random_mask(layout: &Layout, p_neuron: f64, p_weight: f64, rng: &mut Rng) -> SubnetworkMask {
    let neurons = NeuronMask {
        layers: layout
            .hidden_layers()
            .iter()
            .map(|l| (0..l.fan_out).map(|_| rng.bernoulli(p_neuron)).collect())
            .collect(),
    };
    let mut weights = vec![false; layout.feature_len()];
    for (li, l) in layout.hidden_layers().iter().enumerate() {
        for p in l.range() {
            weights[p] = neurons.layers[li][l.output_neuron(p)] && rng.bernoulli(p_weight);
        }
    }
    SubnetworkMask::from_parts(neurons, weights)
}

pub fn blobs(tasks: usize, per_class: usize, seed: u64) -> TaskStream {
    synthetic_blobs(tasks, 2, 10, per_class, 3.0, seed).unwrap()
}

pub fn small_config(seed: u64) -> TriREConfig {
    TriREConfig {
        lr: 0.01,
        lr_revise: 0.001,
        lambda: 1.0,
        mu: 0.9,
        zeta: 0.5,
        epochs: EpochSplit::from_total(5),
        batch_size: 16,
        buffer_capacity: 30,
        seed,
        ..Default::default()
    }
}

/// Directory holding the MNIST IDX files, when present.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    dir.join("train-images-idx3-ubyte.gz").is_file().then_some(dir)
}
