//! Split-MNIST with every method, driven by the same config file the CLI
//! reads. Needs the four IDX files under `data/mnist` (gzip or raw).
//!
//! ```bash
//! cargo run --release --example split_mnist -- configs/desk.cfg
//! ```

use trire::experiment::{load_config, DataContext};
use trire::trainer::{run_method, Method, TriREConfig};

fn main() -> trire::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/desk.cfg".into());
    let cfg = load_config(&path)?;
    let data = DataContext::load(&cfg)?;

    println!("{:>6} {:>6} {:>9} {:>9} {:>8}", "method", "seed", "class-il", "task-il", "recency");
    for &seed in &cfg.seeds {
        let stream = data.stream(seed)?;
        for method in [Method::Joint, Method::Trire, Method::Er, Method::Sgd] {
            let config = TriREConfig { seed, ..cfg.trire.clone() };
            let out = run_method(method, &stream, &cfg.hidden, &config)?;
            let m = &out.metrics;
            println!(
                "{:>6} {:>6} {:>9.3} {:>9.3} {:>8.3}",
                method.name(),
                seed,
                m.class_il,
                m.task_il,
                m.recency_share
            );
        }
    }
    Ok(())
}
