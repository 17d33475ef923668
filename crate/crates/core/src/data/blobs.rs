use super::{Example, Task, TaskSpec, TaskStream};
use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Gaussian class clouds for fast, controllable task streams.
///
/// Class `k` is centred at `0.5 + 0.25 * s_k`, where `s_k` is a random sign
/// vector distinct from every other class's. Samples add isotropic noise with
/// standard deviation `0.25 / separation` and are clipped to `[0, 1]`. Each
/// class gets `n_per_class` training and `n_per_class` test samples;
/// task `t` owns classes `t*c..(t+1)*c`.
pub fn synthetic_blobs(
    num_tasks: usize,
    classes_per_task: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<TaskStream> {
    if separation <= 0.0 || !separation.is_finite() {
        return Err(Error::input("blob separation must be positive"));
    }
    let classes = num_tasks * classes_per_task;
    if dim < 64 && (1u128 << dim) < classes as u128 {
        return Err(Error::input(format!("{dim} dimensions cannot give {classes} distinct centres")));
    }
    let mut rng = Rng::derive(seed, "blobs");
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while centres.len() < classes {
        let c: Vec<f64> = (0..dim)
            .map(|_| if rng.bernoulli(0.5) { 0.75 } else { 0.25 })
            .collect();
        if !centres.contains(&c) {
            centres.push(c);
        }
    }
    let sd = 0.25 / separation;
    let sample = |k: usize, rng: &mut Rng| {
        let f = centres[k]
            .iter()
            .map(|&m| (m + sd * rng.normal()).clamp(0.0, 1.0))
            .collect();
        Example::new(f, k)
    };
    let mut tasks = Vec::with_capacity(num_tasks);
    for t in 0..num_tasks {
        let cls: Vec<usize> = (t * classes_per_task..(t + 1) * classes_per_task).collect();
        let mut train: Vec<Example> = Vec::new();
        let mut test: Vec<Example> = Vec::new();
        for &k in &cls {
            for _ in 0..n_per_class {
                train.push(sample(k, &mut rng));
            }
            for _ in 0..n_per_class {
                test.push(sample(k, &mut rng));
            }
        }
        rng.shuffle(&mut train);
        rng.shuffle(&mut test);
        tasks.push(Task {
            spec: TaskSpec {
                task_id: t,
                classes: cls,
            },
            train,
            test,
        });
    }
    Ok(TaskStream { tasks, classes })
}
