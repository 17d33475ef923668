//! Command-line runner.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trire::eval::{predict_stream, MetricsReport, TaskAccuracyMatrix, Protocol};
use trire::experiment::{
    self, load_config, parse_config, sweep_ablation, sweep_pruning, sweep_rewind, DataContext, ExperimentConfig, RunManifest,
    SweepResult, CRITERIA,
};
use trire::masks::WeightCriterion;
use trire::model::checkpoint::Checkpoint;
use trire::model::MlpNet;
use trire::trainer::Method;
use trire::{Error, Result};

#[derive(Parser)]
#[command(name = "trire", version, about = "Retain, revise and rewind continual learning on split image streams")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Train one method over every configured seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Rerun the configuration recorded in a manifest.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Compare rewind points.
    SweepRewind {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        percentiles: Vec<f64>,
    },
    /// Switch the Revise and Rewind phases on and off.
    SweepAblation {
        #[command(flatten)]
        common: Common,
    },
    /// Compare weight-scoring criteria used for extraction.
    SweepPruning {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "magnitude,fisher,cwi")]
        criteria: Vec<String>,
    },
    /// Evaluate a saved checkpoint on the configured stream.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Use the working model even when an EMA model is stored.
        #[arg(long)]
        working: bool,
    },
    /// Print the rehearsal buffer stored in a checkpoint.
    InspectBuffer {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Configuration file; omitted means all defaults.
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// Rehearsal buffer capacity.
    #[arg(long)]
    buffer: Option<usize>,
}

impl Common {
    fn load(&self, base: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
        let mut cfg = match (base, &self.config) {
            (Some(c), _) => c,
            (None, Some(path)) => load_config(path)?,
            (None, None) => parse_config("")?,
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse::<Method>().map_err(|_| Error::Config {
                line: None,
                message: format!("unknown method `{m}` (expected trire, sgd, er or joint)"),
            })?;
        }
        if let Some(b) = self.buffer {
            cfg.trire.buffer_capacity = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_sweep(r: &SweepResult, x: &str) {
    println!("{x:>22}  class-il        task-il");
    for v in &r.variants {
        let rows: Vec<_> = r.rows.iter().filter(|row| &row.variant == v).collect();
        let c = experiment::Spread::of(&rows.iter().map(|r| r.class_il).collect::<Vec<_>>());
        let t = experiment::Spread::of(&rows.iter().map(|r| r.task_il).collect::<Vec<_>>());
        println!(
            "{v:>22}  {:.2} ± {:.2}   {:.2} ± {:.2}",
            100.0 * c.mean,
            100.0 * c.std,
            100.0 * t.mean,
            100.0 * t.std
        );
    }
}

fn criterion(name: &str) -> Result<WeightCriterion> {
    CRITERIA.into_iter().find(|c| c.name() == name).ok_or_else(|| Error::Config {
        line: None,
        message: format!("unknown criterion `{name}` (expected magnitude, fisher or cwi)"),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Run { common, manifest } => {
            let base = manifest.map(RunManifest::load).transpose()?.map(|m| m.config);
            let cfg = common.load(base)?;
            let out = experiment::run_experiment(&cfg)?;
            println!("{} over seeds {:?} -> {}", cfg.method.name(), cfg.seeds, out.dir.display());
            for (k, s) in &out.aggregate.metrics {
                println!("{k:>14}  {:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std);
            }
        }
        Verb::SweepRewind { common, percentiles } => {
            let r = sweep_rewind(&common.load(None)?, &percentiles)?;
            print_sweep(&r, "percentile");
        }
        Verb::SweepAblation { common } => {
            let r = sweep_ablation(&common.load(None)?)?;
            print_sweep(&r, "variant");
        }
        Verb::SweepPruning { common, criteria } => {
            let criteria = criteria.iter().map(|c| criterion(c)).collect::<Result<Vec<_>>>()?;
            let r = sweep_pruning(&common.load(None)?, &criteria)?;
            print_sweep(&r, "criterion");
        }
        Verb::Evaluate {
            common,
            checkpoint,
            working,
        } => {
            let cfg = common.load(None)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let net = match (&ck.ema, working) {
                (Some(ema), false) => MlpNet::from_params(ck.arch.clone(), ema.clone())?,
                _ => ck.working_net()?,
            };
            let stream = DataContext::load(&cfg)?.stream(cfg.seeds[0])?;
            if stream.feature_len() != ck.arch.input || stream.classes > ck.arch.classes {
                return Err(Error::Data(format!(
                    "checkpoint expects {} features and {} classes, stream has {} and {}",
                    ck.arch.input,
                    ck.arch.classes,
                    stream.feature_len(),
                    stream.classes
                )));
            }
            let preds = predict_stream(&net, &stream, stream.len())?;
            // Only the final state is known, so the matrix has one row and
            // stability/plasticity are left out.
            let mut single = TaskAccuracyMatrix::default();
            single.push_row(preds.iter().map(|p| p.accuracy(Protocol::ClassIl)).collect())?;
            let report = MetricsReport::build(&preds, &single, &stream)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?);
        }
        Verb::InspectBuffer { checkpoint } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let Some(buffer) = ck.buffer else {
                return Err(Error::Data(format!("{} stores no buffer", checkpoint.display())));
            };
            let stats = buffer.stats(ck.arch.classes);
            println!("capacity {}  stored {}  seen {}", buffer.capacity(), stats.len, stats.seen);
            println!("class counts {:?}", stats.class_counts);
            let q = stats.loss_quantiles;
            println!(
                "stored loss min {:.4}  q1 {:.4}  median {:.4}  q3 {:.4}  max {:.4}",
                q[0], q[1], q[2], q[3], q[4]
            );
            let mut per_task = std::collections::BTreeMap::<usize, usize>::new();
            for s in buffer.slots() {
                *per_task.entry(s.task_id).or_default() += 1;
            }
            println!("slots per task {per_task:?}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
