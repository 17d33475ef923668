//! Smallest end-to-end run: three two-class tasks of Gaussian blobs,
//! TriRE against plain sequential training.
//!
//! ```bash
//! cargo run --release --example blobs_quickstart
//! ```

use trire::data::synthetic_blobs;
use trire::trainer::{run_method, EpochSplit, Method, TriREConfig};

fn main() -> trire::Result<()> {
    let stream = synthetic_blobs(3, 2, 10, 80, 3.0, 7)?;
    let config = TriREConfig {
        lr: 0.002,
        lr_revise: 0.0002,
        mu: 0.9,
        zeta: 1.0,
        epochs: EpochSplit::from_total(5),
        batch_size: 16,
        buffer_capacity: 30,
        ..Default::default()
    };

    for method in [Method::Sgd, Method::Trire] {
        let out = run_method(method, &stream, &[32, 32], &config)?;
        println!("{}: class-il {:.3}, task-il {:.3}", method.name(), out.metrics.class_il, out.metrics.task_il);
        for row in &out.record.class_il.rows {
            let cells: Vec<String> = row.iter().map(|a| format!("{a:.2}")).collect();
            println!("  {}", cells.join(" "));
        }
    }
    Ok(())
}
