//! Everything the metrics report says about a finished run beyond raw
//! accuracy: stability/plasticity trade-off, calibration and where
//! Class-IL predictions land task-wise.

use trire::data::synthetic_blobs;
use trire::trainer::{run_method, EpochSplit, Method, TriREConfig};

fn main() -> trire::Result<()> {
    let stream = synthetic_blobs(4, 2, 10, 80, 2.5, 5)?;
    let config = TriREConfig {
        lr: 0.002,
        lr_revise: 0.0002,
        mu: 0.9,
        zeta: 1.0,
        epochs: EpochSplit::from_total(5),
        batch_size: 16,
        buffer_capacity: 40,
        ..Default::default()
    };
    for method in [Method::Sgd, Method::Trire] {
        let m = run_method(method, &stream, &[32], &config)?.metrics;
        println!("== {}", method.name());
        if let Some(sp) = &m.stability_plasticity {
            println!("stability {:.3}  plasticity {:.3}  trade-off {:.3}", sp.stability, sp.plasticity, sp.tradeoff);
        }
        println!("ece {:.4}", m.ece);
        for b in m.reliability.iter().filter(|b| b.count > 0) {
            println!("  [{:.1}, {:.1})  n={:<4} acc {:.3}  conf {:.3}", b.lower, b.upper, b.count, b.accuracy, b.confidence);
        }
        println!("task confusion (row: true task, column: predicted task)");
        for row in &m.task_confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
            println!("  {}", cells.join(" "));
        }
        println!("share of earlier-task predictions sent to the last task: {:.3}", m.recency_share);
    }
    Ok(())
}
