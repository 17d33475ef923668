//! Class-IL accuracy as a function of the rewind point. Without arguments
//! it sweeps a blob stream; pass a config file to sweep that setup instead.
//! Artifacts land in `<out>/sweep-rewind/`.
//!
//! ```bash
//! cargo run --release --example rewind_sweep
//! cargo run --release --example rewind_sweep -- configs/desk.cfg
//! ```

use trire::experiment::{load_config, parse_config, sweep_rewind};

const BLOBS: &str = "
seeds = 0,1  out = runs/example-rewind
[data]
source = blobs  blob_dim = 10  blob_samples = 60  tasks = 3
[model]
hidden = 32
[train]
epochs = 10  lr = 0.002  lr_revise = 0.0002  buffer = 30  mu = 0.9  zeta = 1  batch_size = 16
";

fn main() -> trire::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => load_config(path)?,
        None => parse_config(BLOBS)?,
    };
    let points = [0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9];
    let result = sweep_rewind(&cfg, &points)?;
    println!("{}", result.summary_csv("percentile"));
    Ok(())
}
