//! Drives the three phases by hand on a blob stream and watches the
//! optimizer through the step hook: how many steps each phase/route takes,
//! how many parameters each one may touch, and how the subnetwork grows.
//!
//! ```bash
//! cargo run --release --example phases
//! ```

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use trire::data::synthetic_blobs;
use trire::model::Architecture;
use trire::trainer::{EpochSplit, Method, Trainer, TriREConfig};

fn main() -> trire::Result<()> {
    let stream = synthetic_blobs(3, 2, 12, 60, 3.0, 1)?;
    let arch = Architecture::new(stream.feature_len(), vec![24, 24], stream.classes);
    let config = TriREConfig {
        lr: 0.002,
        lr_revise: 0.0002,
        epochs: EpochSplit::from_total(5),
        batch_size: 16,
        buffer_capacity: 40,
        ..Default::default()
    };

    // (phase, route) -> (steps, mean number of eligible parameters)
    let tally = Rc::new(RefCell::new(BTreeMap::<String, (usize, usize)>::new()));
    let sink = Rc::clone(&tally);
    let mut t = Trainer::new(arch, Method::Trire, config)?;
    t.observe(move |e| {
        let eligible = e.update_mask.map_or(e.before.len(), |m| m.iter().filter(|&&b| b).count());
        let mut sink = sink.borrow_mut();
        let slot = sink.entry(format!("{:?}/{:?}", e.phase, e.route)).or_default();
        slot.0 += 1;
        slot.1 += eligible;
    });

    let total = t.net().layout().total();
    for task in &stream.tasks {
        t.retain_phase(task)?;
        t.extract(task)?;
        let s_t = t.state().current.as_ref().map_or(0.0, |m| m.density());
        t.revise_phase(task)?;
        t.merge_and_rewind(true)?;
        t.relearn_phase(task)?;
        t.update_buffer(task)?;
        println!(
            "task {}: S_t density {:.3}, S density {:.3}, per layer {:?}",
            task.spec.task_id,
            s_t,
            t.state().cumulative.density(),
            t.state().cumulative.retained_per_layer(t.net().layout())
        );
        for (key, (steps, eligible)) in std::mem::take(&mut *tally.borrow_mut()) {
            println!("  {key:<16} {steps:>4} steps, {:>5} of {total} params each", eligible / steps);
        }
    }
    Ok(())
}
