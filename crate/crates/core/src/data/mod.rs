//! Datasets, class-incremental task streams and minibatching.

mod batches;
mod blobs;
pub mod idx;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use batches::{assemble, minibatches};
pub use blobs::synthetic_blobs;
pub use idx::load_idx;

use crate::error::{Error, Result};
use crate::numeric::Rng;

/// One labelled sample. Features are shared so buffers and splits can
/// hold the same example without copying pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Arc<[f64]>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self {
            features: features.into(),
            label,
        }
    }
}

/// Labelled train/test data over a fixed class count.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(train: Vec<Example>, test: Vec<Example>) -> Result<Self> {
        let width = train.first().or(test.first()).map(|e| e.features.len());
        if let Some(w) = width {
            if let Some(bad) = train.iter().chain(&test).find(|e| e.features.len() != w) {
                return Err(Error::shape(format!(
                    "feature length {} differs from {w}",
                    bad.features.len()
                )));
            }
        }
        let classes = train.iter().chain(&test).map(|e| e.label + 1).max().unwrap_or(0);
        Ok(Self {
            train,
            test,
            classes,
        })
    }

    /// Loads the four MNIST IDX files from `dir`, gzip-compressed or not.
    pub fn mnist(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let find = |stem: &str| -> Result<std::path::PathBuf> {
            [stem.to_string(), format!("{stem}.gz")]
                .into_iter()
                .map(|n| dir.join(n))
                .find(|p| p.is_file())
                .ok_or_else(|| Error::Data(format!("{stem} not found in {}", dir.display())))
        };
        let train = load_idx(find("train-images-idx3-ubyte")?, find("train-labels-idx1-ubyte")?)?;
        let test = load_idx(find("t10k-images-idx3-ubyte")?, find("t10k-labels-idx1-ubyte")?)?;
        Self::new(train, test)
    }

    pub fn feature_len(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, |e| e.features.len())
    }

    /// Keeps the first `train`/`test` examples of each class after a seeded
    /// shuffle; `None` keeps the split whole.
    pub fn subsample_per_class(&self, train: Option<usize>, test: Option<usize>, seed: u64) -> Self {
        let pick = |split: &[Example], n: Option<usize>, tag: &str| -> Vec<Example> {
            let Some(n) = n else { return split.to_vec() };
            let mut rng = Rng::derive(seed, tag);
            let order = rng.permutation(split.len());
            let mut taken = vec![0usize; self.classes];
            let mut keep: Vec<usize> = order
                .into_iter()
                .filter(|&i| {
                    let c = split[i].label;
                    taken[c] += 1;
                    taken[c] <= n
                })
                .collect();
            keep.sort_unstable();
            keep.into_iter().map(|i| split[i].clone()).collect()
        };
        Self {
            train: pick(&self.train, train, "subsample-train"),
            test: pick(&self.test, test, "subsample-test"),
            classes: self.classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Task {
    pub spec: TaskSpec,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl Task {
    /// Seeded holdout: shuffles the train split and moves the last
    /// `fraction` of it into a validation split.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> (Task, Vec<Example>) {
        let mut rng = Rng::derive(seed, &format!("validation-{}", self.spec.task_id));
        let mut train = self.train.clone();
        rng.shuffle(&mut train);
        let n_val = ((train.len() as f64) * fraction).round() as usize;
        let val = train.split_off(train.len() - n_val.min(train.len()));
        (
            Task {
                spec: self.spec.clone(),
                train,
                test: self.test.clone(),
            },
            val,
        )
    }
}

/// How classes are assigned to tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    #[default]
    Ascending,
    Shuffled,
}

/// Ordered class-incremental tasks with disjoint class sets.
#[derive(Clone, Debug)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    /// Width of the classifier head (all classes of all tasks).
    pub classes: usize,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.tasks
            .iter()
            .flat_map(|t| t.train.first().or(t.test.first()))
            .map(|e| e.features.len())
            .next()
            .unwrap_or(0)
    }

    /// Task owning each class, `None` for classes outside the stream.
    pub fn class_to_task(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.classes];
        for t in &self.tasks {
            for &c in &t.spec.classes {
                map[c] = Some(t.spec.task_id);
            }
        }
        map
    }

    /// All tasks merged into one, for the joint-training upper bound.
    pub fn joint(&self, seed: u64) -> TaskStream {
        let mut rng = Rng::derive(seed, "joint");
        let mut train: Vec<Example> = self.tasks.iter().flat_map(|t| t.train.clone()).collect();
        rng.shuffle(&mut train);
        TaskStream {
            tasks: vec![Task {
                spec: TaskSpec {
                    task_id: 0,
                    classes: self.tasks.iter().flat_map(|t| t.spec.classes.clone()).collect(),
                },
                train,
                test: self.tasks.iter().flat_map(|t| t.test.clone()).collect(),
            }],
            classes: self.classes,
        }
    }

    /// Every task with its validation holdout removed, plus the holdouts.
    pub fn with_validation_holdout(&self, fraction: f64, seed: u64) -> (TaskStream, Vec<Vec<Example>>) {
        let (tasks, vals) = self
            .tasks
            .iter()
            .map(|t| t.split_validation(fraction, seed))
            .unzip();
        (
            TaskStream {
                tasks,
                classes: self.classes,
            },
            vals,
        )
    }
}

/// Splits a dataset into `num_tasks` tasks of `classes_per_task` classes.
///
/// Ascending order assigns classes `{0..c}`, `{c..2c}`, ...; shuffled order
/// draws a seeded class permutation first. Within each task both splits
/// are shuffled with the seed.
pub fn build_split_tasks(
    dataset: &Dataset,
    num_tasks: usize,
    classes_per_task: usize,
    order: ClassOrder,
    seed: u64,
) -> Result<TaskStream> {
    let mut present: Vec<usize> = dataset.train.iter().map(|e| e.label).collect();
    present.sort_unstable();
    present.dedup();
    let needed = num_tasks * classes_per_task;
    if num_tasks == 0 || classes_per_task == 0 || needed > present.len() {
        return Err(Error::input(format!(
            "{num_tasks} tasks x {classes_per_task} classes needs {needed} classes, dataset has {}",
            present.len()
        )));
    }
    if order == ClassOrder::Shuffled {
        Rng::derive(seed, "class-order").shuffle(&mut present);
    }
    let tasks = (0..num_tasks)
        .map(|t| {
            let classes = present[t * classes_per_task..(t + 1) * classes_per_task].to_vec();
            let select = |split: &[Example], tag: &str| {
                let mut out: Vec<Example> =
                    split.iter().filter(|e| classes.contains(&e.label)).cloned().collect();
                Rng::derive(seed, &format!("{tag}-{t}")).shuffle(&mut out);
                out
            };
            Task {
                train: select(&dataset.train, "task-train"),
                test: select(&dataset.test, "task-test"),
                spec: TaskSpec { task_id: t, classes },
            }
        })
        .collect();
    Ok(TaskStream {
        tasks,
        classes: dataset.classes,
    })
}
