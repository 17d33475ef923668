//! The per-task Retain / Revise / Rewind loop and the SGD, ER and joint
//! baselines that share its machinery.

mod config;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{EpochSplit, Method, TriREConfig};

use crate::data::{assemble, minibatches, Example, Task, TaskStream};
use crate::ema::{consistency_loss, EmaModel};
use crate::error::{Error, Result};
use crate::eval::{predict_stream, MetricsReport, Protocol, TaskAccuracyMatrix};
use crate::masks::{extract_subnetwork, ScoringSets, SubnetworkMask};
use crate::model::{task_logit_mask, ActivationCounters, Architecture, MlpNet, ParamVector};
use crate::numeric::{softmax_ce, AdamState, Matrix, Rng};
use crate::rehearsal::{per_sample_losses, BufferStats, MemoryBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Retain,
    Revise,
    Rewind,
    /// Plain training used by the baselines.
    Train,
}

/// Which minibatch an optimizer step was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Current,
    Buffer,
    /// One step on the summed current and buffer losses (ER).
    Combined,
}

/// Emitted after every optimizer step when an observer is attached.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub task: usize,
    pub phase: Phase,
    pub route: Route,
    pub lr: f64,
    /// `None` means every parameter was eligible.
    pub update_mask: Option<&'a [bool]>,
    pub before: &'a [f64],
    pub after: &'a [f64],
}

pub type Observer<'o> = Box<dyn FnMut(&StepEvent<'_>) + 'o>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalModel {
    Ema,
    Working,
}

/// Mask and rewind bookkeeping carried across tasks.
#[derive(Clone, Debug)]
pub struct TaskRunState {
    /// Union of every extracted subnetwork so far.
    pub cumulative: SubnetworkMask,
    /// Rewind point saved during the current task's Retain phase.
    pub checkpoint: Option<ParamVector>,
    /// Subnetwork extracted for the current task.
    pub current: Option<SubnetworkMask>,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub task: usize,
    pub phase: Phase,
    pub epoch: usize,
    /// Mean current-data cross-entropy over the epoch's minibatches.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: usize,
    pub task_density: f64,
    pub cumulative_density: f64,
    pub retained_per_layer: Vec<usize>,
    pub rewound: bool,
    pub rewind_epoch: usize,
    pub buffer: BufferStats,
}

/// Append-only log of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub losses: Vec<EpochLoss>,
    pub class_il: TaskAccuracyMatrix,
    pub task_il: TaskAccuracyMatrix,
    pub tasks: Vec<TaskSummary>,
    pub evaluated_with: EvalModel,
    pub ema_updates: u64,
    pub wall_clock_secs: f64,
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub metrics: MetricsReport,
    pub net: MlpNet,
    pub ema: EmaModel,
    pub buffer: MemoryBuffer,
    pub state: TaskRunState,
}

struct Streams {
    batches: Rng,
    buffer_sample: Rng,
    buffer_update: Rng,
    ema: Rng,
    extraction: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            batches: Rng::derive(seed, "batches"),
            buffer_sample: Rng::derive(seed, "buffer-sample"),
            buffer_update: Rng::derive(seed, "buffer-update"),
            ema: Rng::derive(seed, "ema"),
            extraction: Rng::derive(seed, "extraction"),
        }
    }
}

pub struct Trainer<'o> {
    config: TriREConfig,
    method: Method,
    net: MlpNet,
    ema: EmaModel,
    buffer: MemoryBuffer,
    state: TaskRunState,
    counters: ActivationCounters,
    rng: Streams,
    observer: Option<Observer<'o>>,
    record: RunRecord,
    task: usize,
    restores: usize,
}

impl<'o> Trainer<'o> {
    pub fn new(arch: Architecture, method: Method, config: TriREConfig) -> Result<Self> {
        config.validate()?;
        let net = MlpNet::new(arch, &mut Rng::derive(config.seed, "init"));
        let ema = EmaModel::new(&net, config.mu, config.zeta)?;
        let capacity = match method {
            Method::Trire | Method::Er => config.buffer_capacity,
            Method::Sgd | Method::Joint => 0,
        };
        let state = TaskRunState {
            cumulative: SubnetworkMask::empty(net.layout()),
            checkpoint: None,
            current: None,
            phase: Phase::Retain,
        };
        let evaluated_with = if method == Method::Trire && !config.eval_working {
            EvalModel::Ema
        } else {
            EvalModel::Working
        };
        Ok(Self {
            counters: ActivationCounters::new(net.architecture()),
            rng: Streams::new(config.seed),
            record: RunRecord {
                method,
                seed: config.seed,
                losses: Vec::new(),
                class_il: TaskAccuracyMatrix::default(),
                task_il: TaskAccuracyMatrix::default(),
                tasks: Vec::new(),
                evaluated_with,
                ema_updates: 0,
                wall_clock_secs: 0.0,
            },
            buffer: MemoryBuffer::new(capacity),
            config,
            method,
            net,
            ema,
            state,
            observer: None,
            task: 0,
            restores: 0,
        })
    }

    /// Attaches a callback receiving every optimizer step.
    pub fn observe(&mut self, f: impl FnMut(&StepEvent<'_>) + 'o) {
        self.observer = Some(Box::new(f));
    }

    pub fn config(&self) -> &TriREConfig {
        &self.config
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.net
    }

    pub fn ema(&self) -> &EmaModel {
        &self.ema
    }

    pub fn buffer(&self) -> &MemoryBuffer {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut MemoryBuffer {
        &mut self.buffer
    }

    pub fn state(&self) -> &TaskRunState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TaskRunState {
        &mut self.state
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn counters(&self) -> &ActivationCounters {
        &self.counters
    }

    /// Number of rewind restores performed so far.
    pub fn restores(&self) -> usize {
        self.restores
    }

    /// Model used for evaluation: the EMA mirror unless configured otherwise.
    pub fn eval_net(&self) -> &MlpNet {
        match self.record.evaluated_with {
            EvalModel::Ema => self.ema.net(),
            EvalModel::Working => &self.net,
        }
    }

    fn total(&self) -> usize {
        self.net.layout().total()
    }

    fn apply(&mut self, adam: &mut AdamState, grads: &ParamVector, lr: f64, mask: Option<&[bool]>, phase: Phase, route: Route) -> Result<()> {
        let before = self.observer.is_some().then(|| self.net.params().to_vec());
        adam.step(self.net.params_mut(), &grads.0, lr, mask)?;
        if let (Some(obs), Some(before)) = (self.observer.as_mut(), before) {
            obs(&StepEvent {
                task: self.task,
                phase,
                route,
                lr,
                update_mask: mask,
                before: &before,
                after: self.net.params(),
            });
        }
        Ok(())
    }

    fn batch(examples: &[Example], idx: &[usize]) -> (Matrix, Vec<usize>) {
        assemble(idx.iter().map(|&i| &examples[i]))
    }

    /// Gradient of `lambda * CE + lambda_cr * consistency` on a buffer batch.
    fn buffer_gradient(&self, idx: &[usize]) -> Result<ParamVector> {
        let slots = self.buffer.slots();
        let (x, y) = assemble(idx.iter().map(|&i| &slots[i].example));
        let (logits, trace) = self.net.forward(&x, None, None)?;
        let (_, mut g) = softmax_ce(&logits, &y, None)?;
        g.as_mut_slice().iter_mut().for_each(|v| *v *= self.config.lambda);
        if self.config.lambda_cr != 0.0 {
            let target = self.ema.net().logits(&x)?;
            if let Some((_, gc)) = consistency_loss(&logits, &target)? {
                for (a, b) in g.as_mut_slice().iter_mut().zip(gc.as_slice()) {
                    *a += self.config.lambda_cr * b;
                }
            }
        }
        self.net.backward(&trace, &g)
    }

    /// One epoch of two-step routed training (TriRE phases).
    #[allow(clippy::too_many_arguments)]
    fn routed_epoch(
        &mut self,
        task: &Task,
        phase: Phase,
        lr: f64,
        adam: &mut AdamState,
        current_mask: &[bool],
        buffer_mask: Option<&[bool]>,
        count: bool,
    ) -> Result<f64> {
        let batches = minibatches(task.train.len(), self.config.batch_size, &mut self.rng.batches);
        let mut loss_sum = 0.0;
        for idx in &batches {
            let (x, y) = Self::batch(&task.train, idx);
            let (logits, trace) = if count {
                self.net.forward(&x, Some(self.config.cwi.kappa), Some(&mut self.counters))?
            } else {
                self.net.forward(&x, None, None)?
            };
            let (loss, g) = softmax_ce(&logits, &y, None)?;
            loss_sum += loss;
            let grads = self.net.backward(&trace, &g)?;
            self.apply(adam, &grads, lr, Some(current_mask), phase, Route::Current)?;

            if let Some(mask) = buffer_mask {
                let bidx = self.buffer.sample_batch(self.config.batch_size, &mut self.rng.buffer_sample);
                if !bidx.is_empty() {
                    let grads = self.buffer_gradient(&bidx)?;
                    self.apply(adam, &grads, lr, Some(mask), phase, Route::Buffer)?;
                }
            }
            if self.ema.maybe_update(&self.net, &mut self.rng.ema)? {
                self.record.ema_updates += 1;
            }
        }
        Ok(loss_sum / batches.len().max(1) as f64)
    }

    /// One epoch of single-step training on `L_t + lambda L_er` (baselines).
    fn plain_epoch(&mut self, task: &Task, adam: &mut AdamState) -> Result<f64> {
        let batches = minibatches(task.train.len(), self.config.batch_size, &mut self.rng.batches);
        let mut loss_sum = 0.0;
        for idx in &batches {
            let (x, y) = Self::batch(&task.train, idx);
            let (logits, trace) = self.net.forward(&x, None, None)?;
            let (loss, g) = softmax_ce(&logits, &y, None)?;
            loss_sum += loss;
            let mut grads = self.net.backward(&trace, &g)?;
            let bidx = self.buffer.sample_batch(self.config.batch_size, &mut self.rng.buffer_sample);
            let route = if bidx.is_empty() {
                Route::Current
            } else {
                let slots = self.buffer.slots();
                let (xb, yb) = assemble(bidx.iter().map(|&i| &slots[i].example));
                let (lb, tb) = self.net.forward(&xb, None, None)?;
                let (_, gb) = softmax_ce(&lb, &yb, None)?;
                let gbuf = self.net.backward(&tb, &gb)?;
                for (a, b) in grads.0.iter_mut().zip(&gbuf.0) {
                    *a += self.config.lambda * b;
                }
                Route::Combined
            };
            self.apply(adam, &grads, self.config.lr, None, Phase::Train, route)?;
        }
        Ok(loss_sum / batches.len().max(1) as f64)
    }

    fn log_loss(&mut self, phase: Phase, epoch: usize, loss: f64) {
        self.record.losses.push(EpochLoss {
            task: self.task,
            phase,
            epoch,
            loss,
        });
    }

    /// Retain: current data trains everything outside `S` plus the head;
    /// buffer data trains `S` plus the head. Activation counters are reset
    /// first and accumulate over the phase; the rewind point is saved at the
    /// end of the configured epoch.
    pub fn retain_phase(&mut self, task: &Task) -> Result<()> {
        if task.train.is_empty() {
            return Err(Error::input(format!("task {} has no training data", task.spec.task_id)));
        }
        self.state.phase = Phase::Retain;
        self.state.checkpoint = None;
        self.counters.reset();
        let total = self.total();
        let current = self.state.cumulative.complement().update_set(total, true);
        let buffer = self.state.cumulative.update_set(total, true);
        let k = self.config.rewind_epoch();
        let mut adam = AdamState::new(total, self.config.adam);
        for epoch in 1..=self.config.epochs.retain {
            let loss = self.routed_epoch(task, Phase::Retain, self.config.lr, &mut adam, &current, Some(&buffer), true)?;
            self.log_loss(Phase::Retain, epoch, loss);
            if epoch == k {
                self.state.checkpoint = Some(self.net.snapshot());
            }
        }
        Ok(())
    }

    /// Extracts the current task's subnetwork from the activation counters
    /// and the configured weight criterion.
    pub fn extract(&mut self, task: &Task) -> Result<()> {
        let cap = self.config.cwi.scoring_cap.min(task.train.len());
        let buffered = self.buffer.examples();
        let classes = task_logit_mask(&task.spec.classes, self.net.architecture().classes);
        let sets = ScoringSets {
            current: &task.train[..cap],
            buffer: &buffered,
            task_classes: &classes,
        };
        let mask = extract_subnetwork(
            &self.net,
            &self.counters,
            &self.config.cwi,
            self.config.criterion,
            self.config.extraction,
            &sets,
            &mut self.rng.extraction,
        )?;
        self.state.current = Some(mask);
        Ok(())
    }

    /// Revise: current data fine-tunes everything outside `S ∩ S_t`, buffer
    /// data fine-tunes `S ∩ S_t`, both with the head and at the reduced rate.
    pub fn revise_phase(&mut self, task: &Task) -> Result<()> {
        let s_t = self
            .state
            .current
            .as_ref()
            .ok_or_else(|| Error::State("revise needs an extracted subnetwork".into()))?;
        let overlap = self.state.cumulative.intersect(s_t)?;
        self.state.phase = Phase::Revise;
        let total = self.total();
        let current = overlap.complement().update_set(total, true);
        let buffer = (!overlap.is_empty()).then(|| overlap.update_set(total, true));
        let mut adam = AdamState::new(total, self.config.adam);
        for epoch in 1..=self.config.epochs.revise {
            let loss = self.routed_epoch(
                task,
                Phase::Revise,
                self.config.lr_revise,
                &mut adam,
                &current,
                buffer.as_deref(),
                false,
            )?;
            self.log_loss(Phase::Revise, epoch, loss);
        }
        Ok(())
    }

    /// Merges `S_t` into `S`; with `rewind` set, restores every extractor
    /// parameter outside the new `S` to the saved rewind point.
    pub fn merge_and_rewind(&mut self, rewind: bool) -> Result<()> {
        let s_t = self
            .state
            .current
            .as_ref()
            .ok_or_else(|| Error::State("merge needs an extracted subnetwork".into()))?;
        let merged = self.state.cumulative.union(s_t)?;
        if rewind {
            let theta_k = self
                .state
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::State("no rewind point saved for this task".into()))?;
            let subset = merged.complement().update_set(self.net.layout().total(), false);
            self.net.restore(theta_k, Some(&subset))?;
            self.restores += 1;
        }
        self.state.cumulative = merged;
        Ok(())
    }

    /// Relearn after rewinding: current data trains everything outside `S`
    /// plus the head at the full rate.
    pub fn relearn_phase(&mut self, task: &Task) -> Result<()> {
        self.state.phase = Phase::Rewind;
        let total = self.total();
        let current = self.state.cumulative.complement().update_set(total, true);
        let mut adam = AdamState::new(total, self.config.adam);
        for epoch in 1..=self.config.epochs.rewind {
            let loss = self.routed_epoch(task, Phase::Rewind, self.config.lr, &mut adam, &current, None, false)?;
            self.log_loss(Phase::Rewind, epoch, loss);
        }
        Ok(())
    }

    /// Task end: refreshes stored buffer losses, then streams the task's
    /// training split through the buffer.
    pub fn update_buffer(&mut self, task: &Task) -> Result<()> {
        if self.buffer.capacity() == 0 {
            self.buffer
                .update_from_task(task.spec.task_id, &task.train, &vec![0.0; task.train.len()], &mut self.rng.buffer_update)?;
            return Ok(());
        }
        self.buffer.refresh_losses(&self.net)?;
        let losses = per_sample_losses(&self.net, &task.train)?;
        self.buffer
            .update_from_task(task.spec.task_id, &task.train, &losses, &mut self.rng.buffer_update)
    }

    /// Trains one task with the configured method.
    pub fn train_task(&mut self, task: &Task) -> Result<()> {
        self.task = task.spec.task_id;
        let mut rewound = false;
        match self.method {
            Method::Trire => {
                self.retain_phase(task)?;
                self.extract(task)?;
                if self.config.revise_on {
                    self.revise_phase(task)?;
                }
                rewound = self.config.rewind_on;
                self.merge_and_rewind(rewound)?;
                if rewound {
                    self.relearn_phase(task)?;
                }
            }
            Method::Sgd | Method::Er | Method::Joint => {
                self.state.phase = Phase::Train;
                let mut adam = AdamState::new(self.total(), self.config.adam);
                for epoch in 1..=self.config.epochs.total() {
                    let loss = self.plain_epoch(task, &mut adam)?;
                    self.log_loss(Phase::Train, epoch, loss);
                }
            }
        }
        self.update_buffer(task)?;
        let layout = self.net.layout().clone();
        let classes = self.net.architecture().classes;
        self.record.tasks.push(TaskSummary {
            task: self.task,
            task_density: self.state.current.as_ref().map_or(0.0, SubnetworkMask::density),
            cumulative_density: self.state.cumulative.density(),
            retained_per_layer: self.state.cumulative.retained_per_layer(&layout),
            rewound,
            rewind_epoch: if rewound { self.config.rewind_epoch() } else { 0 },
            buffer: self.buffer.stats(classes),
        });
        Ok(())
    }

    /// Appends Class-IL and Task-IL rows for the first `upto` tasks.
    fn evaluate_rows(&mut self, stream: &TaskStream, upto: usize) -> Result<()> {
        let preds = predict_stream(self.eval_net(), stream, upto)?;
        self.record
            .class_il
            .push_row(preds.iter().map(|p| p.accuracy(Protocol::ClassIl)).collect())?;
        self.record
            .task_il
            .push_row(preds.iter().map(|p| p.accuracy(Protocol::TaskIl)).collect())?;
        Ok(())
    }

    /// Trains on every task of `stream` in order (or on their union for the
    /// joint baseline), evaluating after each task.
    pub fn run(mut self, stream: &TaskStream) -> Result<RunOutcome> {
        let started = Instant::now();
        if stream.is_empty() {
            return Err(Error::input("task stream is empty"));
        }
        if self.method == Method::Joint {
            let joint = stream.joint(self.config.seed);
            self.train_task(&joint.tasks[0])?;
            self.evaluate_rows(stream, stream.len())?;
        } else {
            for (t, task) in stream.tasks.iter().enumerate() {
                self.train_task(task)?;
                self.evaluate_rows(stream, t + 1)?;
            }
        }
        let preds = predict_stream(self.eval_net(), stream, stream.len())?;
        let metrics = MetricsReport::build(&preds, &self.record.class_il, stream)?;
        self.record.wall_clock_secs = started.elapsed().as_secs_f64();
        Ok(RunOutcome {
            record: self.record,
            metrics,
            net: self.net,
            ema: self.ema,
            buffer: self.buffer,
            state: self.state,
        })
    }
}

/// Convenience wrapper: builds a trainer for `stream` and runs it.
pub fn run_method(method: Method, stream: &TaskStream, hidden: &[usize], config: &TriREConfig) -> Result<RunOutcome> {
    let arch = Architecture::new(stream.feature_len(), hidden.to_vec(), stream.classes);
    Trainer::new(arch, method, config.clone())?.run(stream)
}
