//! Experiment orchestration: loading streams, running seeds, sweeps and
//! writing artifacts.
//!
//! Every run directory gets a `manifest.json` before any training starts.
//! Metric files (everything except `record.json`, which carries wall-clock
//! time) are byte-identical across reruns of the same manifest.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use config::{load_config, parse_config, DataSource, ExperimentConfig};

use crate::data::{build_split_tasks, synthetic_blobs, Dataset, TaskStream};
use crate::error::{Error, Result};
use crate::eval::{ReliabilityBin, TaskAccuracyMatrix};
use crate::masks::WeightCriterion;
use crate::model::checkpoint::Checkpoint;
use crate::trainer::{run_method, Method, RunOutcome, TriREConfig};

/// Optional root that relative output directories are placed under.
pub const OUT_ENV: &str = "TRIRE_OUT";

/// Resolves the configured output directory against [`OUT_ENV`].
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(root) if cfg.out.is_relative() => PathBuf::from(root).join(&cfg.out),
        _ => cfg.out.clone(),
    }
}

/// Loaded data, shared by every seed and sweep point of an experiment.
pub struct DataContext {
    config: ExperimentConfig,
    dataset: Option<Dataset>,
}

impl DataContext {
    /// Loads (and so validates) the configured dataset. Missing or
    /// malformed files fail here, before any training.
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = match &config.data {
            DataSource::Idx { dir, .. } => {
                if !dir.is_dir() {
                    return Err(Error::Data(format!("dataset directory {} does not exist", dir.display())));
                }
                let d = Dataset::mnist(dir)?;
                let classes = config.tasks * config.classes_per_task;
                if d.classes < classes {
                    return Err(Error::Data(format!(
                        "{} holds {} classes, {classes} needed",
                        dir.display(),
                        d.classes
                    )));
                }
                Some(d)
            }
            DataSource::Blobs { .. } => None,
        };
        Ok(Self {
            config: config.clone(),
            dataset,
        })
    }

    /// The task stream for one seed.
    pub fn stream(&self, seed: u64) -> Result<TaskStream> {
        let c = &self.config;
        let stream = match (&c.data, &self.dataset) {
            (
                DataSource::Idx {
                    train_per_class,
                    test_per_class,
                    ..
                },
                Some(d),
            ) => {
                let d = d.subsample_per_class(*train_per_class, *test_per_class, seed);
                build_split_tasks(&d, c.tasks, c.classes_per_task, c.order, seed)?
            }
            (
                DataSource::Blobs {
                    dim,
                    samples_per_class,
                    separation,
                },
                _,
            ) => synthetic_blobs(c.tasks, c.classes_per_task, *dim, *samples_per_class, *separation, seed)?,
            _ => unreachable!("idx source loads its dataset"),
        };
        if c.holdout > 0.0 {
            let (mut rest, vals) = stream.with_validation_holdout(c.holdout, seed);
            for (t, v) in rest.tasks.iter_mut().zip(vals) {
                t.test = v;
            }
            return Ok(rest);
        }
        Ok(stream)
    }
}

/// Files written for one seed, relative to the experiment directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFiles {
    pub seed: u64,
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `run`, `sweep-rewind`, `sweep-ablation` or `sweep-pruning`.
    pub kind: String,
    pub code_version: String,
    pub created_unix_secs: u64,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedFiles>,
    pub aggregate: Vec<PathBuf>,
}

impl RunManifest {
    fn new(kind: &str, config: &ExperimentConfig) -> Self {
        Self {
            kind: kind.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            created_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            config: config.clone(),
            seeds: Vec::new(),
            aggregate: Vec::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(None, format!("{}: {e}", path.display())))
    }

    /// Writes the manifest; refuses to replace one already in `dir`.
    fn write_new(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        if path.exists() {
            return Err(Error::Input(format!(
                "{} already exists; choose a fresh output directory",
                path.display()
            )));
        }
        write(&path, &json(self)?)
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Input(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// CSV of a `T x T` prediction-share matrix.
pub fn confusion_csv(m: &[Vec<f64>]) -> String {
    let mut s = String::from("true_task,predicted_task,share\n");
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let _ = writeln!(s, "{i},{j},{v:.6}");
        }
    }
    s
}

pub fn reliability_csv(bins: &[ReliabilityBin]) -> String {
    let mut s = String::from("bin,lower,upper,count,accuracy,confidence\n");
    for (i, b) in bins.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i},{:.2},{:.2},{},{:.6},{:.6}",
            b.lower, b.upper, b.count, b.accuracy, b.confidence
        );
    }
    s
}

/// Scalar metrics of one run in a fixed order.
pub fn headline(out: &RunOutcome) -> Vec<(&'static str, f64)> {
    let m = &out.metrics;
    let sp = m.stability_plasticity;
    let mut v = vec![("class_il", m.class_il), ("task_il", m.task_il)];
    if let Some(sp) = sp {
        v.extend([("stability", sp.stability), ("plasticity", sp.plasticity), ("tradeoff", sp.tradeoff)]);
    }
    v.extend([("ece", m.ece), ("recency_share", m.recency_share)]);
    v
}

fn summary_csv(out: &RunOutcome) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in headline(out) {
        let _ = writeln!(s, "{k},{v:.6}");
    }
    s
}

fn losses_csv(out: &RunOutcome) -> String {
    let mut s = String::from("task,phase,epoch,loss\n");
    for l in &out.record.losses {
        let phase = serde_json::to_value(l.phase).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let _ = writeln!(s, "{},{phase},{},{:.8}", l.task, l.epoch, l.loss);
    }
    s
}

fn tasks_csv(out: &RunOutcome) -> String {
    let mut s = String::from("task,task_density,cumulative_density,rewound,rewind_epoch,buffer_len,buffer_seen\n");
    for t in &out.record.tasks {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{},{},{}",
            t.task, t.task_density, t.cumulative_density, t.rewound, t.rewind_epoch, t.buffer.len, t.buffer.seen
        );
    }
    s
}

/// Writes every per-seed artifact into `dir`; returns the file names.
pub fn write_run_artifacts(dir: &Path, out: &RunOutcome, checkpoint: bool) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(&str, String)> = vec![
        ("record.json", json(&out.record)?),
        ("metrics.json", json(&out.metrics)?),
        ("summary.csv", summary_csv(out)),
        ("class_il.csv", out.record.class_il.to_csv()),
        ("task_il.csv", out.record.task_il.to_csv()),
        ("confusion.csv", confusion_csv(&out.metrics.task_confusion)),
        ("reliability.csv", reliability_csv(&out.metrics.reliability)),
        ("losses.csv", losses_csv(out)),
        ("tasks.csv", tasks_csv(out)),
    ];
    for (name, body) in &files {
        write(&dir.join(name), body)?;
    }
    let mut names: Vec<PathBuf> = files.drain(..).map(|(n, _)| PathBuf::from(n)).collect();
    if checkpoint {
        let ck = Checkpoint {
            arch: out.net.architecture().clone(),
            working: out.net.snapshot(),
            ema: Some(out.ema.net().snapshot()),
            mask: Some(out.state.cumulative.clone()),
            buffer: Some(out.buffer.clone()),
        };
        ck.save(dir.join("checkpoint.bin"))?;
        names.push("checkpoint.bin".into());
    }
    Ok(names)
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    /// Sample (n - 1) standard deviation; 0 for a single value.
    pub std: f64,
    pub values: Vec<f64>,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / n };
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self {
            mean,
            std,
            values: values.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, Spread>,
}

impl Aggregate {
    pub fn of(method: Method, runs: &[RunOutcome]) -> Self {
        let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in runs {
            for (k, v) in headline(r) {
                cols.entry(k.to_string()).or_default().push(v);
            }
        }
        Self {
            method,
            seeds: runs.iter().map(|r| r.record.seed).collect(),
            metrics: cols.into_iter().map(|(k, v)| (k, Spread::of(&v))).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,mean,std,n\n");
        for (k, sp) in &self.metrics {
            let _ = writeln!(s, "{k},{:.6},{:.6},{}", sp.mean, sp.std, sp.values.len());
        }
        s
    }
}

pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    pub runs: Vec<RunOutcome>,
    pub aggregate: Aggregate,
    pub dir: PathBuf,
}

fn seed_dir(seed: u64) -> PathBuf {
    PathBuf::from(format!("seed-{seed}"))
}

fn trire_config(cfg: &ExperimentConfig, seed: u64) -> TriREConfig {
    TriREConfig {
        seed,
        ..cfg.trire.clone()
    }
}

/// Runs the configured method for every seed, writing per-seed artifacts
/// and an aggregate across seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = DataContext::load(cfg)?;
    let dir = output_dir(cfg);
    let mut manifest = RunManifest::new("run", cfg);
    manifest.seeds = cfg
        .seeds
        .iter()
        .map(|&seed| SeedFiles {
            seed,
            dir: seed_dir(seed),
            files: planned_files(cfg.checkpoints),
        })
        .collect();
    manifest.aggregate = vec!["aggregate.json".into(), "aggregate.csv".into()];
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    manifest.write_new(&dir)?;

    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let stream = data.stream(seed)?;
        let out = run_method(cfg.method, &stream, &cfg.hidden, &trire_config(cfg, seed))?;
        write_run_artifacts(&dir.join(seed_dir(seed)), &out, cfg.checkpoints)?;
        runs.push(out);
    }
    let aggregate = Aggregate::of(cfg.method, &runs);
    write(&dir.join("aggregate.json"), &json(&aggregate)?)?;
    write(&dir.join("aggregate.csv"), &aggregate.to_csv())?;
    Ok(ExperimentOutcome {
        manifest,
        runs,
        aggregate,
        dir,
    })
}

fn planned_files(checkpoint: bool) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = [
        "record.json",
        "metrics.json",
        "summary.csv",
        "class_il.csv",
        "task_il.csv",
        "confusion.csv",
        "reliability.csv",
        "losses.csv",
        "tasks.csv",
    ]
    .into_iter()
    .map(PathBuf::from)
    .collect();
    if checkpoint {
        v.push("checkpoint.bin".into());
    }
    v
}

/// One sweep variant evaluated on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub seed: u64,
    pub class_il: f64,
    pub task_il: f64,
    pub class_il_matrix: TaskAccuracyMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: String,
    /// Variants in sweep order.
    pub variants: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Class-IL accuracies of `variant` across seeds.
    pub fn class_il(&self, variant: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.variant == variant).map(|r| r.class_il).collect()
    }

    pub fn mean_class_il(&self, variant: &str) -> f64 {
        Spread::of(&self.class_il(variant)).mean
    }

    pub fn summary_csv(&self, x: &str) -> String {
        let mut s = format!("{x},class_il_mean,class_il_std,task_il_mean,task_il_std,n\n");
        for v in &self.variants {
            let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| &r.variant == v).collect();
            let c = Spread::of(&rows.iter().map(|r| r.class_il).collect::<Vec<_>>());
            let t = Spread::of(&rows.iter().map(|r| r.task_il).collect::<Vec<_>>());
            let _ = writeln!(s, "{v},{:.6},{:.6},{:.6},{:.6},{}", c.mean, c.std, t.mean, t.std, rows.len());
        }
        s
    }

    fn seed_csv(&self, x: &str, seed: u64) -> String {
        let mut s = format!("{x},class_il,task_il\n");
        for r in self.rows.iter().filter(|r| r.seed == seed) {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.variant, r.class_il, r.task_il);
        }
        s
    }
}

/// Runs TriRE once per variant per seed on shared streams and writes a
/// per-seed CSV plus a summary with the `x` column name.
fn sweep(cfg: &ExperimentConfig, kind: &str, x: &str, variants: Vec<(String, TriREConfig)>) -> Result<SweepResult> {
    let data = DataContext::load(cfg)?;
    for (_, v) in &variants {
        v.validate()?;
    }
    let dir = output_dir(cfg).join(kind);
    let mut manifest = RunManifest::new(kind, cfg);
    manifest.seeds = cfg
        .seeds
        .iter()
        .map(|&seed| SeedFiles {
            seed,
            dir: PathBuf::new(),
            files: vec![format!("seed-{seed}.csv").into()],
        })
        .collect();
    manifest.aggregate = vec!["summary.csv".into(), "results.json".into()];
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    manifest.write_new(&dir)?;

    let mut result = SweepResult {
        kind: kind.into(),
        variants: variants.iter().map(|(n, _)| n.clone()).collect(),
        rows: Vec::new(),
    };
    for &seed in &cfg.seeds {
        let stream = data.stream(seed)?;
        for (name, v) in &variants {
            let out = run_method(Method::Trire, &stream, &cfg.hidden, &TriREConfig { seed, ..v.clone() })?;
            result.rows.push(SweepRow {
                variant: name.clone(),
                seed,
                class_il: out.metrics.class_il,
                task_il: out.metrics.task_il,
                class_il_matrix: out.record.class_il,
            });
        }
        write(&dir.join(format!("seed-{seed}.csv")), &result.seed_csv(x, seed))?;
    }
    write(&dir.join("summary.csv"), &result.summary_csv(x))?;
    write(&dir.join("results.json"), &json(&result)?)?;
    Ok(result)
}

/// Sorts and deduplicates rewind percentiles, rejecting values outside (0, 1).
pub fn rewind_points(percentiles: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = percentiles.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::config(None, format!("rewind percentile {p} outside (0, 1)")));
    }
    let mut v = percentiles.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.is_empty() {
        return Err(Error::config(None, "no rewind percentiles given"));
    }
    Ok(v)
}

/// One full TriRE run per rewind percentile per seed.
pub fn sweep_rewind(cfg: &ExperimentConfig, percentiles: &[f64]) -> Result<SweepResult> {
    let variants = rewind_points(percentiles)?
        .into_iter()
        .map(|p| {
            (
                format!("{p}"),
                TriREConfig {
                    rewind_percentile: p,
                    ..cfg.trire.clone()
                },
            )
        })
        .collect();
    sweep(cfg, "sweep-rewind", "percentile", variants)
}

/// Phase switches of the ablation grid, in output order. Revise without
/// Retain is infeasible and not part of the grid.
pub const ABLATIONS: [(&str, bool, bool); 4] = [
    ("retain", false, false),
    ("retain+revise", true, false),
    ("retain+rewind", false, true),
    ("retain+revise+rewind", true, true),
];

pub fn sweep_ablation(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let variants = ABLATIONS
        .iter()
        .map(|&(name, revise_on, rewind_on)| {
            (
                name.to_string(),
                TriREConfig {
                    revise_on,
                    rewind_on,
                    ..cfg.trire.clone()
                },
            )
        })
        .collect();
    sweep(cfg, "sweep-ablation", "variant", variants)
}

pub const CRITERIA: [WeightCriterion; 3] = [WeightCriterion::Magnitude, WeightCriterion::Fisher, WeightCriterion::Cwi];

/// Swaps only the weight-scoring criterion used during extraction.
pub fn sweep_pruning(cfg: &ExperimentConfig, criteria: &[WeightCriterion]) -> Result<SweepResult> {
    let mut uniq: Vec<WeightCriterion> = Vec::new();
    for c in criteria {
        if !uniq.contains(c) {
            uniq.push(*c);
        }
    }
    let variants = uniq
        .into_iter()
        .map(|criterion| {
            (
                criterion.name().to_string(),
                TriREConfig {
                    criterion,
                    ..cfg.trire.clone()
                },
            )
        })
        .collect();
    sweep(cfg, "sweep-pruning", "criterion", variants)
}
