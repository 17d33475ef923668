//! Accuracy matrices, Class-IL / Task-IL protocols, stability-plasticity,
//! calibration and task-level confusion.

use serde::{Deserialize, Serialize};

use crate::data::{assemble, Example, Task, TaskStream};
use crate::error::{Error, Result};
use crate::model::{task_logit_mask, MlpNet};
use crate::numeric::{argmax, softmax};

/// Environment variable holding the evaluation worker count.
pub const THREADS_ENV: &str = "TRIRE_THREADS";

/// Default number of confidence bins for calibration.
pub const ECE_BINS: usize = 10;

const EVAL_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Argmax over every class.
    ClassIl,
    /// Argmax restricted to the sample's own task classes.
    TaskIl,
}

/// Per-sample outcome of one evaluation pass over a task's test split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskPredictions {
    pub labels: Vec<usize>,
    pub class_il: Vec<usize>,
    pub task_il: Vec<usize>,
    /// Max softmax probability over all classes.
    pub confidence: Vec<f64>,
}

impl TaskPredictions {
    pub fn accuracy(&self, protocol: Protocol) -> f64 {
        let pred = match protocol {
            Protocol::ClassIl => &self.class_il,
            Protocol::TaskIl => &self.task_il,
        };
        if self.labels.is_empty() {
            return 0.0;
        }
        let hits = pred.iter().zip(&self.labels).filter(|(p, y)| p == y).count();
        hits as f64 / self.labels.len() as f64
    }

    pub fn correct(&self) -> Vec<bool> {
        self.class_il.iter().zip(&self.labels).map(|(p, y)| p == y).collect()
    }
}

/// Worker count from the environment, defaulting to one.
pub fn eval_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn predict_chunk(net: &MlpNet, chunk: &[Example], mask: &[bool]) -> Result<TaskPredictions> {
    let (x, y) = assemble(chunk);
    let logits = net.logits(&x)?;
    let probs = softmax(&logits);
    let mut out = TaskPredictions {
        labels: y,
        ..Default::default()
    };
    for r in 0..logits.rows() {
        let c = argmax(logits.row(r), None);
        out.class_il.push(c);
        out.task_il.push(argmax(logits.row(r), Some(mask)));
        out.confidence.push(probs.get(r, c));
    }
    Ok(out)
}

/// Predictions of `net` on one task's test split, sharded over `threads`
/// workers; results are concatenated in sample order.
pub fn predict_task(net: &MlpNet, task: &Task, classes: usize, threads: usize) -> Result<TaskPredictions> {
    let mask = task_logit_mask(&task.spec.classes, classes);
    let chunks: Vec<&[Example]> = task.test.chunks(EVAL_CHUNK).collect();
    let parts: Vec<Result<TaskPredictions>> = if threads <= 1 || chunks.len() <= 1 {
        chunks.iter().map(|c| predict_chunk(net, c, &mask)).collect()
    } else {
        let per = chunks.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|group| {
                    let mask = &mask;
                    s.spawn(move || group.iter().map(|c| predict_chunk(net, c, mask)).collect::<Vec<_>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    let mut all = TaskPredictions::default();
    for p in parts {
        let p = p?;
        all.labels.extend(p.labels);
        all.class_il.extend(p.class_il);
        all.task_il.extend(p.task_il);
        all.confidence.extend(p.confidence);
    }
    Ok(all)
}

/// Predictions on the first `upto` tasks of the stream.
pub fn predict_stream(net: &MlpNet, stream: &TaskStream, upto: usize) -> Result<Vec<TaskPredictions>> {
    let threads = eval_threads();
    stream.tasks[..upto.min(stream.len())]
        .iter()
        .map(|t| predict_task(net, t, stream.classes, threads))
        .collect()
}

/// Top-1 accuracy on every task of the stream under `protocol`.
pub fn evaluate(net: &MlpNet, stream: &TaskStream, protocol: Protocol) -> Result<Vec<f64>> {
    Ok(predict_stream(net, stream, stream.len())?
        .iter()
        .map(|p| p.accuracy(protocol))
        .collect())
}

/// `rows[i][j]`: accuracy on task `j` after training task `i`, for `j <= i`.
/// A single-row matrix holds a joint run evaluated on every task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracyMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl TaskAccuracyMatrix {
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::input("accuracy outside [0, 1]"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last_row(&self) -> &[f64] {
        self.rows.last().map_or(&[], Vec::as_slice)
    }

    /// Mean of the final row: average accuracy over all tasks after training.
    pub fn final_average(&self) -> f64 {
        mean(self.last_row())
    }

    pub fn is_square_lower(&self) -> bool {
        self.rows.iter().enumerate().all(|(i, r)| r.len() == i + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("after_task,task,accuracy\n");
        for (i, r) in self.rows.iter().enumerate() {
            for (j, a) in r.iter().enumerate() {
                s.push_str(&format!("{i},{j},{a:.6}\n"));
            }
        }
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Harmonic mean, defined as 0 when both inputs are 0.
pub fn tradeoff(s: f64, p: f64) -> f64 {
    if s + p == 0.0 {
        0.0
    } else {
        2.0 * s * p / (s + p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityPlasticity {
    pub stability: f64,
    pub plasticity: f64,
    pub tradeoff: f64,
}

/// Stability: mean final-row accuracy on every task but the last.
/// Plasticity: mean of the diagonal. Trade-off: their harmonic mean.
pub fn stability_plasticity(a: &TaskAccuracyMatrix) -> Result<StabilityPlasticity> {
    let t = a.rows.len();
    if t < 2 {
        return Err(Error::Degenerate("stability needs at least two tasks".into()));
    }
    if !a.is_square_lower() {
        return Err(Error::shape("accuracy matrix is not lower-triangular"));
    }
    let stability = mean(&a.rows[t - 1][..t - 1]);
    let diag: Vec<f64> = (0..t).map(|i| a.rows[i][i]).collect();
    let plasticity = mean(&diag);
    Ok(StabilityPlasticity {
        stability,
        plasticity,
        tradeoff: tradeoff(stability, plasticity),
    })
}

fn bin_of(conf: f64, bins: usize) -> usize {
    ((conf * bins as f64).floor() as usize).min(bins - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

/// Equal-width confidence bins with per-bin accuracy and mean confidence.
pub fn reliability_table(confidences: &[f64], correct: &[bool], bins: usize) -> Result<Vec<ReliabilityBin>> {
    if confidences.len() != correct.len() {
        return Err(Error::shape(format!(
            "{} confidences for {} outcomes",
            confidences.len(),
            correct.len()
        )));
    }
    if bins == 0 {
        return Err(Error::input("calibration needs at least one bin"));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::input(format!("confidence {c} outside [0, 1]")));
    }
    let mut count = vec![0usize; bins];
    let mut hits = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_of(c, bins);
        count[b] += 1;
        hits[b] += usize::from(ok);
        conf[b] += c;
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b].max(1) as f64;
            ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count: count[b],
                accuracy: hits[b] as f64 / n,
                confidence: conf[b] / n,
            }
        })
        .collect())
}

/// Expected calibration error: `sum_b (n_b / N) |acc_b - conf_b|`.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    let table = reliability_table(confidences, correct, bins)?;
    let n = confidences.len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(table
        .iter()
        .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.confidence).abs())
        .sum())
}

/// Row `i`: share of task `i`'s test samples whose Class-IL prediction falls
/// in each task's classes. Samples predicted outside the stream count
/// towards no task, so such rows may sum below one.
pub fn task_confusion(preds: &[TaskPredictions], class_to_task: &[Option<usize>], tasks: usize) -> Vec<Vec<f64>> {
    preds
        .iter()
        .map(|p| {
            let mut row = vec![0.0; tasks];
            for &c in &p.class_il {
                if let Some(Some(t)) = class_to_task.get(c) {
                    row[*t] += 1.0;
                }
            }
            let n = p.class_il.len().max(1) as f64;
            row.iter_mut().for_each(|v| *v /= n);
            row
        })
        .collect()
}

/// Mean share given to the final task by the rows of every earlier task.
pub fn recency_share(confusion: &[Vec<f64>]) -> f64 {
    let t = confusion.len();
    if t < 2 {
        return 0.0;
    }
    mean(&confusion[..t - 1].iter().map(|r| r[t - 1]).collect::<Vec<_>>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_il: f64,
    pub task_il: f64,
    pub class_il_per_task: Vec<f64>,
    pub task_il_per_task: Vec<f64>,
    /// Absent for single-task (joint) runs.
    pub stability_plasticity: Option<StabilityPlasticity>,
    pub ece: f64,
    pub reliability: Vec<ReliabilityBin>,
    pub task_confusion: Vec<Vec<f64>>,
    pub recency_share: f64,
}

impl MetricsReport {
    /// Builds the report from the final predictions on every task and the
    /// Class-IL accuracy matrix collected during training.
    pub fn build(preds: &[TaskPredictions], class_il_matrix: &TaskAccuracyMatrix, stream: &TaskStream) -> Result<Self> {
        let conf: Vec<f64> = preds.iter().flat_map(|p| p.confidence.iter().copied()).collect();
        let correct: Vec<bool> = preds.iter().flat_map(TaskPredictions::correct).collect();
        let confusion = task_confusion(preds, &stream.class_to_task(), stream.len());
        let class_il_per_task: Vec<f64> = preds.iter().map(|p| p.accuracy(Protocol::ClassIl)).collect();
        let task_il_per_task: Vec<f64> = preds.iter().map(|p| p.accuracy(Protocol::TaskIl)).collect();
        let report = Self {
            class_il: mean(&class_il_per_task),
            task_il: mean(&task_il_per_task),
            class_il_per_task,
            task_il_per_task,
            stability_plasticity: if class_il_matrix.rows.len() >= 2 {
                Some(stability_plasticity(class_il_matrix)?)
            } else {
                None
            },
            ece: ece(&conf, &correct, ECE_BINS)?,
            reliability: reliability_table(&conf, &correct, ECE_BINS)?,
            recency_share: recency_share(&confusion),
            task_confusion: confusion,
        };
        if !report.is_finite() {
            return Err(Error::NonFinite("metrics report"));
        }
        Ok(report)
    }

    pub fn is_finite(&self) -> bool {
        let sp = self
            .stability_plasticity
            .is_none_or(|s| s.stability.is_finite() && s.plasticity.is_finite() && s.tradeoff.is_finite());
        sp && [self.class_il, self.task_il, self.ece, self.recency_share]
            .iter()
            .chain(&self.class_il_per_task)
            .chain(&self.task_il_per_task)
            .chain(self.task_confusion.iter().flatten())
            .all(|v| v.is_finite())
    }
}
