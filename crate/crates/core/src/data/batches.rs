use super::Example;
use crate::numeric::{Matrix, Rng};

/// One epoch of index batches over a split of `len` examples.
///
/// Order is a fresh seeded permutation; the final partial batch is kept.
pub fn minibatches(len: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    rng.permutation(len)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Stacks the selected examples into a feature matrix plus labels.
pub fn assemble<'a, I>(examples: I) -> (Matrix, Vec<usize>)
where
    I: IntoIterator<Item = &'a Example>,
{
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = 0;
    for e in examples {
        width = e.features.len();
        data.extend_from_slice(&e.features);
        labels.push(e.label);
    }
    let rows = labels.len();
    let x = Matrix::from_vec(rows, if rows == 0 { 0 } else { width }, data)
        .expect("examples share one feature width");
    (x, labels)
}
