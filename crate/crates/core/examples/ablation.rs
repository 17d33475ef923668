//! Phase on/off grid: Retain alone, with Revise, with Rewind, and all three.
//! Every variant sees the same stream and seed.
//!
//! ```bash
//! cargo run --release --example ablation
//! cargo run --release --example ablation -- configs/desk.cfg
//! ```

use trire::experiment::{load_config, parse_config, sweep_ablation};

const BLOBS: &str = "
seeds = 0,1,2  out = runs/example-ablation
[data]
source = blobs  blob_dim = 10  blob_samples = 60  tasks = 4
[model]
hidden = 32
[train]
epochs = 5  lr = 0.002  lr_revise = 0.0002  buffer = 40  mu = 0.9  zeta = 1  batch_size = 16
";

fn main() -> trire::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => load_config(path)?,
        None => parse_config(BLOBS)?,
    };
    let grid = sweep_ablation(&cfg)?;
    for v in &grid.variants {
        let accs = grid.class_il(v);
        println!("{v:<22} mean {:.3}  per seed {accs:.3?}", grid.mean_class_il(v));
    }
    Ok(())
}
