//! Swaps only the weight-scoring rule used for subnetwork extraction:
//! plain magnitude, empirical Fisher diagonal, and the continual weight
//! importance score that mixes magnitude with current and buffer gradients.
//!
//! ```bash
//! cargo run --release --example pruning_criteria
//! ```

use trire::experiment::{load_config, parse_config, sweep_pruning, CRITERIA};

const BLOBS: &str = "
seeds = 0,1  out = runs/example-pruning
[data]
source = blobs  blob_dim = 10  blob_samples = 60  tasks = 3
[model]
hidden = 32
[train]
epochs = 5  lr = 0.002  lr_revise = 0.0002  buffer = 30  mu = 0.9  zeta = 1  batch_size = 16  gamma = 0.3
";

fn main() -> trire::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => load_config(path)?,
        None => parse_config(BLOBS)?,
    };
    let result = sweep_pruning(&cfg, &CRITERIA)?;
    print!("{}", result.summary_csv("criterion"));
    Ok(())
}
