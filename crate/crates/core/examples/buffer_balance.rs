//! Loss-aware balanced reservoir: stream a skewed ten-class split through a
//! capacity-200 buffer and show that it still ends up close to balanced,
//! keeping the higher-loss examples of each class.

use trire::data::Example;
use trire::numeric::Rng;
use trire::rehearsal::MemoryBuffer;

fn main() -> trire::Result<()> {
    let mut rng = Rng::new(3);
    // Class c appears (c + 1) * 100 times.
    let mut split: Vec<Example> = (0..10)
        .flat_map(|c| (0..(c + 1) * 100).map(move |i| Example::new(vec![i as f64], c)))
        .collect();
    rng.shuffle(&mut split);
    let losses: Vec<f64> = (0..split.len()).map(|_| rng.uniform() * 2.0).collect();

    let mut buffer = MemoryBuffer::new(200);
    buffer.update_from_task(0, &split, &losses, &mut rng)?;
    let stats = buffer.stats(10);
    println!("seen {}  stored {}", stats.seen, stats.len);
    println!("per class {:?}", stats.class_counts);
    println!("stored-loss quantiles {:.3?}", stats.loss_quantiles);

    let idx = buffer.sample_batch(8, &mut rng);
    let labels: Vec<usize> = idx.iter().map(|&i| buffer.slots()[i].example.label).collect();
    println!("a rehearsal batch draws labels {labels:?}");
    Ok(())
}
