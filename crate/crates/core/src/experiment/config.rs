//! Experiment configuration files.
//!
//! The format is plain `key = value` text. `#` starts a comment, several
//! pairs may share a line, and `[section]` headers group keys. Every key
//! belongs to one section; it may appear under that header or before any
//! header at all. Values containing spaces can be double-quoted.
//!
//! ```text
//! method = trire   seeds = 0,1,2
//! [data]
//! dir = data/mnist  train_per_class = 600
//! [train]
//! epochs = 5  buffer = 200
//! ```

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::ClassOrder;
use crate::error::{Error, Result};
use crate::masks::{ExtractionMode, WeightCriterion};
use crate::trainer::{EpochSplit, Method, TriREConfig};

/// Where task data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// A directory holding the four MNIST-layout IDX files.
    Idx {
        dir: PathBuf,
        train_per_class: Option<usize>,
        test_per_class: Option<usize>,
    },
    /// Gaussian class clouds.
    Blobs {
        dim: usize,
        samples_per_class: usize,
        separation: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub tasks: usize,
    pub classes_per_task: usize,
    pub order: ClassOrder,
    /// Fraction of each task's training split held out and evaluated in
    /// place of the test split; 0 evaluates on the test split.
    pub holdout: f64,
    pub hidden: Vec<usize>,
    pub method: Method,
    pub trire: TriREConfig,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    /// Save the final working model, EMA model, mask and buffer per seed.
    pub checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Idx {
                dir: PathBuf::from("data/mnist"),
                train_per_class: None,
                test_per_class: None,
            },
            tasks: 5,
            classes_per_task: 2,
            order: ClassOrder::Ascending,
            holdout: 0.0,
            hidden: vec![256, 256],
            method: Method::Trire,
            trire: TriREConfig::default(),
            out: PathBuf::from("runs"),
            seeds: vec![0],
            checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(None, m));
        if self.tasks == 0 || self.classes_per_task == 0 {
            return bad("tasks and classes_per_task must be at least 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths {:?} must be non-empty and positive", self.hidden));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout {} outside [0, 1)", self.holdout));
        }
        if let DataSource::Blobs {
            dim,
            samples_per_class,
            separation,
        } = self.data
        {
            if dim == 0 || samples_per_class == 0 || separation.is_nan() || separation <= 0.0 {
                return bad("blob dim, samples_per_class and separation must be positive".into());
            }
        }
        self.trire.validate()
    }
}

/// Sections and the keys they own.
const KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["method", "seeds", "seed", "out", "checkpoints"]),
    (
        "data",
        &[
            "source",
            "dir",
            "train_per_class",
            "test_per_class",
            "tasks",
            "classes_per_task",
            "order",
            "holdout",
            "blob_dim",
            "blob_samples",
            "blob_separation",
        ],
    ),
    ("model", &["hidden"]),
    (
        "train",
        &[
            "lr",
            "lr_revise",
            "lambda",
            "lambda_cr",
            "mu",
            "zeta",
            "rewind_percentile",
            "epochs",
            "epoch_split",
            "batch_size",
            "buffer",
            "alpha",
            "beta",
            "gamma",
            "kappa",
            "scoring_cap",
            "criterion",
            "extraction",
            "revise",
            "rewind",
            "eval_working",
            "adam_beta1",
            "adam_beta2",
            "adam_eps",
        ],
    ),
];

fn section_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(_, keys)| keys.contains(&key)).map(|(s, _)| *s)
}

/// Splits one comment-free line into `key=value` tokens.
fn tokens(line: &str, lineno: usize) -> Result<Vec<(String, String)>> {
    let mut words: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '"' => quoted = !quoted,
            c if c.is_whitespace() && !quoted => {
                // Spaces around `=` and list commas do not split a pair.
                while chars.peek().is_some_and(|c| c.is_whitespace()) {
                    chars.next();
                }
                let glue = matches!(chars.peek(), Some('=' | ',')) || cur.ends_with(['=', ',']);
                if !cur.is_empty() && !glue {
                    words.push(std::mem::take(&mut cur));
                }
            }
            '=' if !quoted => {
                cur.push('=');
                while chars.peek().is_some_and(|c| c.is_whitespace()) {
                    chars.next();
                }
            }
            c => cur.push(c),
        }
    }
    if quoted {
        return Err(Error::config(Some(lineno), "unterminated quote"));
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
        .into_iter()
        .map(|w| match w.split_once('=') {
            Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
            _ => Err(Error::config(Some(lineno), format!("expected key=value, found `{w}`"))),
        })
        .collect()
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

struct Value<'a> {
    key: &'a str,
    raw: &'a str,
    line: usize,
}

impl Value<'_> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::config(Some(self.line), format!("{}: {msg}", self.key))
    }

    fn parse<T: std::str::FromStr>(&self, what: &str) -> Result<T> {
        self.raw
            .trim()
            .parse()
            .map_err(|_| self.err(format!("expected {what}, found `{}`", self.raw)))
    }

    fn float(&self) -> Result<f64> {
        let v: f64 = self.parse("a number")?;
        if !v.is_finite() {
            return Err(self.err("must be finite"));
        }
        Ok(v)
    }

    fn float_in(&self, lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> Result<f64> {
        let v = self.float()?;
        let ok = (if lo_open { v > lo } else { v >= lo }) && (if hi_open { v < hi } else { v <= hi });
        if !ok {
            let l = if lo_open { '(' } else { '[' };
            let h = if hi_open { ')' } else { ']' };
            return Err(self.err(format!("{v} outside {l}{lo}, {hi}{h}")));
        }
        Ok(v)
    }

    fn non_negative(&self) -> Result<f64> {
        self.float_in(0.0, f64::INFINITY, false, true)
    }

    fn positive(&self) -> Result<f64> {
        self.float_in(0.0, f64::INFINITY, true, true)
    }

    fn count(&self) -> Result<usize> {
        self.parse("a non-negative integer")
    }

    fn at_least_one(&self) -> Result<usize> {
        let v = self.count()?;
        if v == 0 {
            return Err(self.err("must be at least 1"));
        }
        Ok(v)
    }

    fn boolean(&self) -> Result<bool> {
        match self.raw.trim() {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            other => Err(self.err(format!("expected a boolean, found `{other}`"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, what: &str) -> Result<Vec<T>> {
        self.raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| self.err(format!("expected a list of {what}, found `{s}`"))))
            .collect()
    }
}

/// Reads and parses a config file. An unreadable file is a config error.
pub fn load_config(path: impl AsRef<std::path::Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(None, format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parses configuration text, applying defaults for absent keys and
/// rejecting unknown keys, malformed values and violated constraints.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut section: Option<&str> = None;
    let mut entries: Vec<(String, String, usize)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::config(Some(lineno), format!("malformed section header `{line}`")))?
                .trim();
            section = Some(
                KEYS.iter()
                    .map(|(s, _)| *s)
                    .find(|s| *s == name)
                    .ok_or_else(|| Error::config(Some(lineno), format!("unknown section `[{name}]`")))?,
            );
            continue;
        }
        for (key, value) in tokens(line, lineno)? {
            let owner = section_of(&key).ok_or_else(|| Error::config(Some(lineno), format!("unknown key `{key}`")))?;
            if let Some(s) = section {
                if s != owner {
                    return Err(Error::config(
                        Some(lineno),
                        format!("key `{key}` belongs to [{owner}], not [{s}]"),
                    ));
                }
            }
            if let Some(first) = seen.insert(key.clone(), lineno) {
                return Err(Error::config(Some(lineno), format!("key `{key}` already set on line {first}")));
            }
            entries.push((key, value, lineno));
        }
    }
    build(&entries)
}

fn build(entries: &[(String, String, usize)]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let t = &mut cfg.trire;
    let mut source = "idx".to_string();
    let mut dir = PathBuf::from("data/mnist");
    let (mut train_pc, mut test_pc) = (None, None);
    let (mut blob_dim, mut blob_n, mut blob_sep) = (20usize, 200usize, 3.0f64);
    let mut line_of: HashMap<&str, usize> = HashMap::new();

    for (key, raw, line) in entries {
        let v = Value {
            key,
            raw,
            line: *line,
        };
        line_of.insert(key.as_str(), *line);
        match key.as_str() {
            "method" => {
                cfg.method = raw
                    .parse()
                    .map_err(|_| v.err(format!("expected trire, sgd, er or joint, found `{raw}`")))?
            }
            "seeds" => cfg.seeds = v.list("integers")?,
            "seed" => cfg.seeds = vec![v.parse("an integer")?],
            "out" => cfg.out = PathBuf::from(raw),
            "checkpoints" => cfg.checkpoints = v.boolean()?,
            "source" => match raw.as_str() {
                "idx" | "blobs" => source = raw.clone(),
                other => return Err(v.err(format!("expected idx or blobs, found `{other}`"))),
            },
            "dir" => dir = PathBuf::from(raw),
            "train_per_class" => train_pc = Some(v.at_least_one()?),
            "test_per_class" => test_pc = Some(v.at_least_one()?),
            "tasks" => cfg.tasks = v.at_least_one()?,
            "classes_per_task" => cfg.classes_per_task = v.at_least_one()?,
            "order" => {
                cfg.order = match raw.as_str() {
                    "ascending" => ClassOrder::Ascending,
                    "shuffled" => ClassOrder::Shuffled,
                    other => return Err(v.err(format!("expected ascending or shuffled, found `{other}`"))),
                }
            }
            "holdout" => cfg.holdout = v.float_in(0.0, 1.0, false, true)?,
            "blob_dim" => blob_dim = v.at_least_one()?,
            "blob_samples" => blob_n = v.at_least_one()?,
            "blob_separation" => blob_sep = v.positive()?,
            "hidden" => {
                cfg.hidden = v.list("widths")?;
                if cfg.hidden.is_empty() || cfg.hidden.contains(&0) {
                    return Err(v.err("widths must be non-empty and positive"));
                }
            }
            "lr" => t.lr = v.positive()?,
            "lr_revise" => t.lr_revise = v.non_negative()?,
            "lambda" => t.lambda = v.non_negative()?,
            "lambda_cr" => t.lambda_cr = v.non_negative()?,
            "mu" => t.mu = v.float_in(0.0, 1.0, true, true)?,
            "zeta" => t.zeta = v.float_in(0.0, 1.0, true, false)?,
            "rewind_percentile" => t.rewind_percentile = v.float_in(0.0, 1.0, true, true)?,
            "epochs" => t.epochs = EpochSplit::from_total(v.at_least_one()?),
            "epoch_split" => {
                let parts: Vec<usize> = raw
                    .split(':')
                    .map(|s| s.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| v.err(format!("expected retain:revise:rewind, found `{raw}`")))?;
                let [retain, revise, rewind] = parts[..] else {
                    return Err(v.err(format!("expected retain:revise:rewind, found `{raw}`")));
                };
                t.epochs = EpochSplit { retain, revise, rewind };
            }
            "batch_size" => t.batch_size = v.at_least_one()?,
            "buffer" => t.buffer_capacity = v.count()?,
            "alpha" => t.cwi.alpha = v.non_negative()?,
            "beta" => t.cwi.beta = v.non_negative()?,
            "gamma" => t.cwi.gamma = v.float_in(0.0, 1.0, true, false)?,
            "kappa" => t.cwi.kappa = v.float_in(0.0, 1.0, true, false)?,
            "scoring_cap" => t.cwi.scoring_cap = v.at_least_one()?,
            "criterion" => {
                t.criterion = match raw.as_str() {
                    "magnitude" => WeightCriterion::Magnitude,
                    "fisher" => WeightCriterion::Fisher,
                    "cwi" => WeightCriterion::Cwi,
                    other => return Err(v.err(format!("expected magnitude, fisher or cwi, found `{other}`"))),
                }
            }
            "extraction" => {
                t.extraction = match raw.as_str() {
                    "deterministic" => ExtractionMode::Deterministic,
                    "bernoulli" => ExtractionMode::Bernoulli,
                    other => return Err(v.err(format!("expected deterministic or bernoulli, found `{other}`"))),
                }
            }
            "revise" => t.revise_on = v.boolean()?,
            "rewind" => t.rewind_on = v.boolean()?,
            "eval_working" => t.eval_working = v.boolean()?,
            "adam_beta1" => t.adam.beta1 = v.float_in(0.0, 1.0, false, true)?,
            "adam_beta2" => t.adam.beta2 = v.float_in(0.0, 1.0, false, true)?,
            "adam_eps" => t.adam.eps = v.positive()?,
            other => unreachable!("key table and parser disagree on `{other}`"),
        }
    }

    cfg.data = if source == "blobs" {
        DataSource::Blobs {
            dim: blob_dim,
            samples_per_class: blob_n,
            separation: blob_sep,
        }
    } else {
        DataSource::Idx {
            dir,
            train_per_class: train_pc,
            test_per_class: test_pc,
        }
    };

    // Cross-key constraints point at the last line involved.
    cfg.validate().map_err(|e| match e {
        Error::Config { line: None, message } => {
            let involved = ["lr", "lr_revise", "epochs", "epoch_split", "tasks", "classes_per_task", "seeds"];
            let line = involved
                .iter()
                .filter(|k| message.contains(*k))
                .filter_map(|k| line_of.get(k).copied())
                .max();
            Error::Config { line, message }
        }
        other => other,
    })?;
    Ok(cfg)
}
