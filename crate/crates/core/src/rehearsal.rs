//! Fixed-capacity rehearsal memory with loss-aware balanced reservoir updates.

use serde::{Deserialize, Serialize};

use crate::data::{assemble, Example};
use crate::error::{Error, Result};
use crate::model::MlpNet;
use crate::numeric::{softmax_ce_rows, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct BufferSlot {
    pub example: Example,
    pub task_id: usize,
    /// Last observed cross-entropy of this example; never negative.
    pub stored_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferStats {
    pub len: usize,
    pub seen: u64,
    pub class_counts: Vec<usize>,
    /// Minimum, quartiles and maximum of the stored losses.
    pub loss_quantiles: [f64; 5],
}

#[derive(Clone, Debug)]
pub struct MemoryBuffer {
    capacity: usize,
    slots: Vec<BufferSlot>,
    seen: u64,
    class_counts: Vec<usize>,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            slots: Vec::with_capacity(capacity),
            seen: 0,
            class_counts: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn slots(&self) -> &[BufferSlot] {
        &self.slots
    }

    pub fn examples(&self) -> Vec<Example> {
        self.slots.iter().map(|s| s.example.clone()).collect()
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.class_counts.get(class).copied().unwrap_or(0)
    }

    /// Slot counts for classes `0..classes`.
    pub fn class_histogram(&self, classes: usize) -> Vec<usize> {
        (0..classes).map(|c| self.class_count(c)).collect()
    }

    /// Rebuilds a buffer from stored slots (used when loading checkpoints).
    pub fn from_slots(capacity: usize, seen: u64, slots: Vec<BufferSlot>) -> Result<Self> {
        if slots.len() > capacity {
            return Err(Error::input(format!(
                "{} slots exceed capacity {capacity}",
                slots.len()
            )));
        }
        let mut b = Self::new(capacity);
        b.seen = seen;
        for s in slots {
            b.bump(s.example.label, 1);
            b.slots.push(s);
        }
        Ok(b)
    }

    fn bump(&mut self, class: usize, delta: isize) {
        if self.class_counts.len() <= class {
            self.class_counts.resize(class + 1, 0);
        }
        self.class_counts[class] = self.class_counts[class].checked_add_signed(delta).expect("class count underflow");
    }

    /// Class losing a slot when an example of `incoming` class is admitted
    /// into a full buffer: the class with the most slots. A tie that
    /// includes `incoming` resolves to it; other ties draw uniformly.
    fn victim_class(&self, incoming: usize, rng: &mut Rng) -> usize {
        let max = self.class_counts.iter().copied().max().unwrap_or(0);
        let tied: Vec<usize> = (0..self.class_counts.len())
            .filter(|&c| self.class_counts[c] == max)
            .collect();
        if tied.contains(&incoming) {
            incoming
        } else if tied.len() == 1 {
            tied[0]
        } else {
            tied[rng.below(tied.len())]
        }
    }

    /// Streams `split` through the buffer once.
    ///
    /// While there is room every example is stored. Once full, example
    /// number `seen` is admitted with probability `capacity / seen`; it then
    /// replaces the lowest-loss slot of the class chosen by the balance rule.
    pub fn update_from_task(
        &mut self,
        task_id: usize,
        split: &[Example],
        losses: &[f64],
        rng: &mut Rng,
    ) -> Result<()> {
        if split.len() != losses.len() {
            return Err(Error::shape(format!(
                "{} losses for {} examples",
                losses.len(),
                split.len()
            )));
        }
        for (example, &loss) in split.iter().zip(losses) {
            if loss.is_nan() || loss < 0.0 {
                return Err(Error::input(format!("loss {loss} is not a non-negative number")));
            }
            self.seen += 1;
            let slot = BufferSlot {
                example: example.clone(),
                task_id,
                stored_loss: loss,
            };
            if self.slots.len() < self.capacity {
                self.bump(slot.example.label, 1);
                self.slots.push(slot);
                continue;
            }
            if self.capacity == 0 || rng.below(self.seen as usize) >= self.capacity {
                continue;
            }
            let class = self.victim_class(slot.example.label, rng);
            let victim = self
                .slots
                .iter()
                .enumerate()
                .filter(|(_, s)| s.example.label == class)
                .min_by(|(i, a), (j, b)| a.stored_loss.total_cmp(&b.stored_loss).then(i.cmp(j)))
                .map(|(i, _)| i)
                .expect("victim class has a slot");
            self.bump(class, -1);
            self.bump(slot.example.label, 1);
            self.slots[victim] = slot;
        }
        Ok(())
    }

    /// Slot indices for one rehearsal batch: uniform with replacement when
    /// the buffer holds fewer than `batch_size` examples, without replacement
    /// otherwise. An empty result means the buffer is empty.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut Rng) -> Vec<usize> {
        let n = self.slots.len();
        if n == 0 {
            return Vec::new();
        }
        if n < batch_size {
            (0..batch_size).map(|_| rng.below(n)).collect()
        } else {
            // Partial Fisher-Yates.
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..batch_size {
                let j = i + rng.below(n - i);
                idx.swap(i, j);
            }
            idx.truncate(batch_size);
            idx
        }
    }

    /// Recomputes every stored loss under `net`.
    pub fn refresh_losses(&mut self, net: &MlpNet) -> Result<()> {
        let losses = per_sample_losses(net, &self.examples())?;
        for (s, l) in self.slots.iter_mut().zip(losses) {
            s.stored_loss = l;
        }
        Ok(())
    }

    pub fn stats(&self, classes: usize) -> BufferStats {
        let mut losses: Vec<f64> = self.slots.iter().map(|s| s.stored_loss).collect();
        losses.sort_by(f64::total_cmp);
        let q = |p: f64| -> f64 {
            if losses.is_empty() {
                return 0.0;
            }
            losses[((losses.len() - 1) as f64 * p).round() as usize]
        };
        BufferStats {
            len: self.slots.len(),
            seen: self.seen,
            class_counts: self.class_histogram(classes),
            loss_quantiles: [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)],
        }
    }
}

/// Cross-entropy of each example under `net`, over all classes.
pub fn per_sample_losses(net: &MlpNet, examples: &[Example]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(512) {
        let (x, y) = assemble(chunk);
        let logits = net.logits(&x)?;
        let (losses, _) = softmax_ce_rows(&logits, &y, None)?;
        out.extend(losses.into_iter().map(|l| l.max(0.0)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(label: usize, tag: f64) -> Example {
        Example::new(vec![tag], label)
    }

    #[test]
    fn underfull_keeps_everything() {
        let mut b = MemoryBuffer::new(4);
        b.update_from_task(0, &[ex(0, 0.0), ex(1, 1.0)], &[0.1, 0.2], &mut Rng::new(0)).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.class_histogram(2), vec![1, 1]);
    }

    #[test]
    fn never_exceeds_capacity_and_counts_consistent() {
        let mut b = MemoryBuffer::new(7);
        let mut rng = Rng::new(1);
        let split: Vec<Example> = (0..500).map(|i| ex(i % 3, i as f64)).collect();
        let losses: Vec<f64> = (0..500).map(|i| (i % 11) as f64).collect();
        b.update_from_task(0, &split, &losses, &mut rng).unwrap();
        assert_eq!(b.len(), 7);
        for c in 0..3 {
            assert_eq!(b.class_count(c), b.slots().iter().filter(|s| s.example.label == c).count());
        }
    }

    #[test]
    fn balanced_two_class_stream() {
        let mut ok = 0;
        for seed in 0..100 {
            let mut rng = Rng::new(seed);
            let mut split: Vec<Example> = (0..10_000).map(|i| ex(i % 2, i as f64)).collect();
            rng.shuffle(&mut split);
            let losses: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
            let mut b = MemoryBuffer::new(4);
            b.update_from_task(0, &split, &losses, &mut rng).unwrap();
            let h = b.class_histogram(2);
            if h.iter().max().unwrap() - h.iter().min().unwrap() <= 1 {
                ok += 1;
            }
        }
        assert!(ok >= 99, "{ok}/100 balanced");
    }

    #[test]
    fn low_loss_items_are_evicted_first() {
        // Buffer of 4 filled with three class-0 items and one class-1 item.
        let mut b = MemoryBuffer::new(4);
        let mut rng = Rng::new(0);
        b.update_from_task(
            0,
            &[ex(0, 0.0), ex(0, 1.0), ex(0, 2.0), ex(1, 3.0)],
            &[0.0, 5.0, 0.0, 9.0],
            &mut rng,
        )
        .unwrap();
        // Feed class-1 candidates until one is admitted: it must displace a
        // zero-loss class-0 slot, the first one (index 0) by tie-break.
        let mut i = 0;
        while b.class_count(1) == 1 {
            b.update_from_task(1, &[ex(1, 100.0 + i as f64)], &[1.0], &mut rng).unwrap();
            i += 1;
        }
        assert_eq!(b.slots()[0].example.label, 1);
        assert_eq!(b.slots()[1].stored_loss, 5.0);
        assert_eq!(b.slots()[2].stored_loss, 0.0);
    }

    #[test]
    fn sampling_rules() {
        let mut b = MemoryBuffer::new(10);
        b.update_from_task(0, &[ex(0, 7.0)], &[0.0], &mut Rng::new(0)).unwrap();
        assert_eq!(b.sample_batch(4, &mut Rng::new(0)), vec![0, 0, 0, 0]);

        let split: Vec<Example> = (0..9).map(|i| ex(i % 2, i as f64)).collect();
        b.update_from_task(0, &split, &[0.0; 9], &mut Rng::new(0)).unwrap();
        let s = b.sample_batch(6, &mut Rng::new(4));
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 6);
        assert_eq!(s, b.sample_batch(6, &mut Rng::new(4)));
        assert!(MemoryBuffer::new(3).sample_batch(4, &mut Rng::new(0)).is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let split: Vec<Example> = (0..300).map(|i| ex(i % 5, i as f64)).collect();
        let losses: Vec<f64> = (0..300).map(|i| ((i * 7) % 13) as f64).collect();
        let run = |seed| {
            let mut b = MemoryBuffer::new(20);
            b.update_from_task(0, &split, &losses, &mut Rng::new(seed)).unwrap();
            b.slots().to_vec()
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn zero_capacity_stores_nothing() {
        let mut b = MemoryBuffer::new(0);
        b.update_from_task(0, &[ex(0, 0.0)], &[1.0], &mut Rng::new(0)).unwrap();
        assert!(b.is_empty());
        assert_eq!(b.seen(), 1);
    }
}
